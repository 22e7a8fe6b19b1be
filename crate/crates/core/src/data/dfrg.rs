//! The DFRG container for distilled sets. Layout, all little-endian:
//!
//! ```text
//! "DFRG" | u16 version | u32 classes | u32 ipc | u32 channels | u32 height | u32 width
//!        | channels x (f64 mean, f64 std) | classes*ipc*channels*height*width f64
//! ```
//!
//! Pixels are class-major and stored bit-exact.

use std::path::Path;

use super::{Normalization, SyntheticSet};
use crate::error::{Error, FormatError, Result};

pub const MAGIC: [u8; 4] = *b"DFRG";
pub const VERSION: u16 = 1;
const FIXED_HEADER: usize = 4 + 2 + 5 * 4;

pub fn encode(set: &SyntheticSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER + 16 * set.channels + 8 * set.pixels.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [set.classes, set.ipc, set.channels, set.height, set.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for c in 0..set.channels {
        out.extend_from_slice(&set.normalization.mean[c].to_le_bytes());
        out.extend_from_slice(&set.normalization.std[c].to_le_bytes());
    }
    for v in &set.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn f64_at(bytes: &[u8], i: usize) -> f64 {
    f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<SyntheticSet, FormatError> {
    if bytes.is_empty() {
        return Err(FormatError::Empty);
    }
    if bytes.len() < 4 {
        return Err(FormatError::TruncatedHeader {
            needed: FIXED_HEADER,
            available: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadContainerMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(FormatError::TruncatedHeader {
            needed: FIXED_HEADER,
            available: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    if bytes.len() < FIXED_HEADER {
        return Err(FormatError::TruncatedHeader {
            needed: FIXED_HEADER,
            available: bytes.len(),
        });
    }
    let dims: Vec<u32> = (0..5)
        .map(|k| u32::from_le_bytes(bytes[6 + 4 * k..10 + 4 * k].try_into().unwrap()))
        .collect();
    if dims.contains(&0) {
        return Err(FormatError::ZeroDimension { dims });
    }
    let [classes, ipc, channels, height, width] = [0, 1, 2, 3, 4].map(|k| dims[k] as usize);
    let header = FIXED_HEADER + 16 * channels;
    if bytes.len() < header {
        return Err(FormatError::TruncatedHeader {
            needed: header,
            available: bytes.len(),
        });
    }
    let mut normalization = Normalization {
        mean: Vec::with_capacity(channels),
        std: Vec::with_capacity(channels),
    };
    for c in 0..channels {
        let (m, s) = (f64_at(bytes, FIXED_HEADER + 16 * c), f64_at(bytes, FIXED_HEADER + 16 * c + 8));
        if !m.is_finite() || !s.is_finite() || s <= 0.0 {
            return Err(FormatError::BadMeta(format!("channel {c} normalization ({m}, {s})")));
        }
        normalization.mean.push(m);
        normalization.std.push(s);
    }
    let count = [classes, ipc, channels, height, width]
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| FormatError::BadMeta("dimensions overflow".into()))?;
    let available = bytes.len() - header;
    if available < count {
        return Err(FormatError::TruncatedPayload {
            needed: count,
            available,
        });
    }
    if available > count {
        return Err(FormatError::TrailingBytes {
            extra: available - count,
        });
    }
    let pixels = bytes[header..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok(SyntheticSet {
        classes,
        ipc,
        channels,
        height,
        width,
        normalization,
        pixels,
    })
}

pub fn save(set: &SyntheticSet, path: &Path) -> Result<()> {
    std::fs::write(path, encode(set)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SyntheticSet> {
    Ok(decode(&super::read_file(path)?)?)
}
