use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha1::{Digest, Sha1};
use sha2::Sha256;

use crate::config::Config;
use crate::error::{Error, Result};

/// Hash git would give `content` as a blob: SHA-1 of `"blob <len>\0" + content`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub bytes: u64,
    pub blob: String,
}

/// What a run consumed and produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the configuration's canonical TOML.
    pub config_hash: String,
    pub seed: u64,
    #[serde(default)]
    pub eval_seeds: Vec<u64>,
    pub outputs: Vec<OutputRecord>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &Config) -> Self {
        Manifest {
            command: command.to_string(),
            config_hash: hex::encode(Sha256::digest(cfg.to_toml().as_bytes())),
            seed: cfg.seed,
            eval_seeds: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Hashes the file at `path` as written.
    pub fn record(&mut self, path: &Path) -> Result<()> {
        let content = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.outputs.push(OutputRecord {
            path: path.to_path_buf(),
            bytes: content.len() as u64,
            blob: git_blob_hash(&content),
        });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}
