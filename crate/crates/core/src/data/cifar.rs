//! CIFAR binary batches: fixed-size records of label byte(s) followed by a
//! 3x32x32 channel-major image. CIFAR-100 records carry a coarse and a fine
//! label; the fine one is used.

use std::path::{Path, PathBuf};

use super::{read_file, ImageBatch};
use crate::error::{FormatError, Result};

pub const IMAGE_BYTES: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_bytes(self) -> usize {
        self.label_bytes() + IMAGE_BYTES
    }

    pub fn classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Decodes one batch file into `[0, 1]`-scaled images.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant) -> Result<ImageBatch, FormatError> {
    if bytes.is_empty() {
        return Err(FormatError::Empty);
    }
    let record = variant.record_bytes();
    if !bytes.len().is_multiple_of(record) {
        return Err(FormatError::RecordSize {
            len: bytes.len(),
            record,
        });
    }
    let classes = variant.classes();
    let n = bytes.len() / record;
    let mut data = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (index, rec) in bytes.chunks_exact(record).enumerate() {
        let label = rec[variant.label_bytes() - 1];
        if label as usize >= classes {
            return Err(FormatError::LabelOutOfRange { index, label, classes });
        }
        labels.push(label as usize);
        data.extend(rec[variant.label_bytes()..].iter().map(|&p| p as f64 / 255.0));
    }
    Ok(ImageBatch {
        channels: 3,
        height: 32,
        width: 32,
        classes,
        data,
        labels,
    })
}

/// Reads and concatenates several batch files in order.
pub fn load_cifar_files(paths: &[PathBuf], variant: CifarVariant) -> Result<ImageBatch> {
    let mut out: Option<ImageBatch> = None;
    for p in paths {
        let b = load_cifar(p, variant)?;
        match &mut out {
            None => out = Some(b),
            Some(acc) => {
                acc.data.extend(b.data);
                acc.labels.extend(b.labels);
            }
        }
    }
    out.ok_or_else(|| crate::Error::InvalidArgument("no CIFAR files given".into()))
}

pub fn load_cifar(path: &Path, variant: CifarVariant) -> Result<ImageBatch> {
    Ok(parse_cifar(&read_file(path)?, variant)?)
}
