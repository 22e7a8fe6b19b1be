//! IDX files as used by MNIST and Fashion-MNIST: a big-endian magic
//! (`0x00000803` for rank-3 u8 images, `0x00000801` for rank-1 u8 labels),
//! big-endian u32 dimensions, then the raw bytes.

use std::path::Path;

use super::{read_file, ImageBatch};
use crate::error::{FormatError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Decoded image file: `count` images of `rows x cols` bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(bytes: &[u8], magic: u32, rank: usize) -> Result<Vec<u32>, FormatError> {
    if bytes.is_empty() {
        return Err(FormatError::Empty);
    }
    let needed = 4 * (1 + rank);
    if bytes.len() < 4 {
        return Err(FormatError::TruncatedHeader {
            needed,
            available: bytes.len(),
        });
    }
    let be = |i: usize| u32::from_be_bytes(bytes[i..i + 4].try_into().unwrap());
    let found = be(0);
    if found != magic {
        return Err(FormatError::BadMagic { expected: magic, found });
    }
    if bytes.len() < needed {
        return Err(FormatError::TruncatedHeader {
            needed,
            available: bytes.len(),
        });
    }
    let dims: Vec<u32> = (0..rank).map(|d| be(4 + 4 * d)).collect();
    if dims.contains(&0) {
        return Err(FormatError::ZeroDimension { dims });
    }
    Ok(dims)
}

fn payload(bytes: &[u8], offset: usize, expected: usize) -> Result<&[u8], FormatError> {
    let available = bytes.len() - offset;
    if available < expected {
        return Err(FormatError::TruncatedPayload {
            needed: expected,
            available,
        });
    }
    if available > expected {
        return Err(FormatError::TrailingBytes {
            extra: available - expected,
        });
    }
    Ok(&bytes[offset..])
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, FormatError> {
    let dims = header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(FormatError::BadMeta("image dimensions overflow".into()))?;
    let pixels = payload(bytes, 16, expected)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Labels must lie in `[0, classes)`.
pub fn parse_labels(bytes: &[u8], classes: usize) -> Result<Vec<u8>, FormatError> {
    let dims = header(bytes, LABELS_MAGIC, 1)?;
    let labels = payload(bytes, 8, dims[0] as usize)?.to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
        return Err(FormatError::LabelOutOfRange { index, label, classes });
    }
    Ok(labels)
}

/// Joins decoded images and labels into a `[0, 1]`-scaled batch.
pub fn to_batch(images: &IdxImages, labels: &[u8], classes: usize) -> Result<ImageBatch, FormatError> {
    if images.count != labels.len() {
        return Err(FormatError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    Ok(ImageBatch {
        channels: 1,
        height: images.rows,
        width: images.cols,
        classes,
        data: images.pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels: labels.iter().map(|&l| l as usize).collect(),
    })
}

/// Reads a ten-class image/label file pair.
pub fn load_idx(images: &Path, labels: &Path) -> Result<ImageBatch> {
    let imgs = parse_images(&read_file(images)?)?;
    let labs = parse_labels(&read_file(labels)?, 10)?;
    Ok(to_batch(&imgs, &labs, 10)?)
}

/// Encodes images in the IDX layout; the inverse of [`parse_images`].
pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let imgs = IdxImages {
            count: 2,
            rows: 2,
            cols: 3,
            pixels: (0..12).collect(),
        };
        assert_eq!(parse_images(&encode_images(&imgs)).unwrap(), imgs);
        assert_eq!(parse_labels(&encode_labels(&[3, 9]), 10).unwrap(), vec![3, 9]);
    }

    #[test]
    fn labels_magic_is_not_images_magic() {
        let err = parse_images(&encode_labels(&[1])).unwrap_err();
        assert_eq!(
            err,
            FormatError::BadMagic {
                expected: IMAGES_MAGIC,
                found: LABELS_MAGIC
            }
        );
    }

    #[test]
    fn pixels_are_scaled() {
        let imgs = IdxImages {
            count: 1,
            rows: 1,
            cols: 2,
            pixels: vec![0, 255],
        };
        let b = to_batch(&imgs, &[4], 10).unwrap();
        assert_eq!(b.data, vec![0.0, 1.0]);
        assert_eq!(b.labels, vec![4]);
    }
}
