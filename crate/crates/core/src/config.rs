//! Run configuration, read from and written to TOML without loss.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{parse_palette, AugOp};
use crate::convnet::Architecture;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Distribution matching: mean embeddings under random networks.
    Dm,
    /// Gradient matching: per-output-channel cosine of parameter gradients.
    Dc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Real,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// `mnist`, `fashion-mnist`, `cifar10` or `cifar100`.
    pub name: String,
    pub dir: PathBuf,
    /// Append the mirror image of every training image.
    #[serde(default)]
    pub flip_closed: bool,
    /// Keep only the first `n` training images of each class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    /// Evaluate on the first `n` test images only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub net_width: usize,
    /// Defaults to 3 (or fewer for inputs too small to halve 3 times).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(default)]
    pub instance_norm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub method: Method,
    /// Match `S` together with its mirror images instead of `S` alone.
    pub fyi: bool,
    pub ipc: usize,
    pub iterations: usize,
    pub syn_lr: f64,
    pub syn_momentum: f64,
    /// Real images sampled per class per iteration.
    pub real_batch: usize,
    pub init: InitMode,
    /// Comma-separated differentiable augmentations, or `none`.
    pub palette: String,
    /// Record the unequalness score of `S` every this many iterations (0 = never).
    #[serde(default)]
    pub trace_every: usize,
    /// Random networks per traced score.
    #[serde(default = "default_trace_thetas")]
    pub trace_thetas: usize,
    /// Iterations averaged into the reported final loss.
    #[serde(default = "default_loss_window")]
    pub loss_window: usize,
}

fn default_trace_thetas() -> usize {
    3
}

fn default_loss_window() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epoch at which the learning rate is multiplied by `lr_drop_factor`;
    /// defaults to `epochs / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub palette: String,
    /// Network width used for retraining; defaults to the model width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net_width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    /// Random networks whose median score is reported.
    pub theta_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub distill: DistillConfig,
    pub retrain: RetrainConfig,
    pub score: ScoreConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            data: DataConfig {
                name: "mnist".into(),
                dir: PathBuf::from("data/mnist"),
                flip_closed: false,
                train_per_class: None,
                test_limit: None,
            },
            model: ModelConfig {
                net_width: 128,
                blocks: None,
                instance_norm: false,
            },
            distill: DistillConfig {
                method: Method::Dm,
                fyi: false,
                ipc: 1,
                iterations: 2000,
                syn_lr: 1.0,
                syn_momentum: 0.5,
                real_batch: 256,
                init: InitMode::Real,
                palette: "none".into(),
                trace_every: 0,
                trace_thetas: default_trace_thetas(),
                loss_window: default_loss_window(),
            },
            retrain: RetrainConfig {
                epochs: 300,
                lr: 0.01,
                momentum: 0.9,
                weight_decay: 5e-4,
                lr_drop_epoch: None,
                lr_drop_factor: 0.1,
                batch_size: 256,
                palette: "crop,color_jitter,cutout,flip,scale,rotate".into(),
                net_width: None,
            },
            score: ScoreConfig { theta_samples: 10 },
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.distill;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in a signed 64-bit integer");
        }
        if d.ipc == 0 {
            return bad("distill.ipc must be positive");
        }
        if d.real_batch == 0 {
            return bad("distill.real_batch must be positive");
        }
        if !(d.syn_lr >= 0.0 && d.syn_lr.is_finite()) || !(0.0..1.0).contains(&d.syn_momentum) {
            return bad("distill.syn_lr must be finite and >= 0, syn_momentum in [0, 1)");
        }
        if self.model.net_width == 0 {
            return bad("model.net_width must be positive");
        }
        let r = &self.retrain;
        if r.batch_size == 0 || r.lr.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !(0.0..1.0).contains(&r.momentum) || r.weight_decay < 0.0 {
            return bad("retrain: batch_size > 0, lr > 0, momentum in [0, 1), weight_decay >= 0");
        }
        if self.score.theta_samples == 0 {
            return bad("score.theta_samples must be positive");
        }
        self.distill_palette()?;
        self.retrain_palette()?;
        Ok(())
    }

    pub fn distill_palette(&self) -> Result<Vec<AugOp>> {
        parse_palette(&self.distill.palette)
    }

    pub fn retrain_palette(&self) -> Result<Vec<AugOp>> {
        parse_palette(&self.retrain.palette)
    }

    /// Architecture for distillation on `channels x height x width` inputs.
    pub fn architecture(&self, channels: usize, height: usize, width: usize, classes: usize) -> Result<Architecture> {
        let mut a = Architecture::for_input(channels, height, width, classes);
        a.net_width = self.model.net_width;
        a.instance_norm = self.model.instance_norm;
        if let Some(b) = self.model.blocks {
            a.blocks = b;
        }
        a.validate()?;
        Ok(a)
    }

    /// Architecture for retraining: the distillation one at `retrain.net_width`.
    pub fn retrain_architecture(&self, channels: usize, height: usize, width: usize, classes: usize) -> Result<Architecture> {
        let mut a = self.architecture(channels, height, width, classes)?;
        if let Some(w) = self.retrain.net_width {
            a.net_width = w;
        }
        Ok(a)
    }

    pub fn lr_drop_epoch(&self) -> usize {
        self.retrain.lr_drop_epoch.unwrap_or(self.retrain.epochs / 2)
    }
}
