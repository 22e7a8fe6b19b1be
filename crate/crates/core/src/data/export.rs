//! Raster output: image grids and heat maps as binary PGM (P5) or PNG.

use std::path::Path;

use super::SyntheticSet;
use crate::error::{Error, Result};

/// An 8-bit raster with 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Pgm,
    Png,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pgm") => Ok(RasterFormat::Pgm),
            Some("png") => Ok(RasterFormat::Png),
            _ => Err(Error::InvalidArgument(format!(
                "{}: output must end in .pgm or .png",
                path.display()
            ))),
        }
    }
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Raster {
    /// Grayscale view; RGB is reduced with Rec. 601 luma weights.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8)
            .collect();
        Raster {
            channels: 1,
            data,
            ..*self
        }
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let gray = self.to_gray();
        let mut out = format!("P5\n{} {}\n255\n", gray.width, gray.height).into_bytes();
        out.extend_from_slice(&gray.data);
        out
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(if self.channels == 3 {
                png::ColorType::Rgb
            } else {
                png::ColorType::Grayscale
            });
            enc.set_depth(png::BitDepth::Eight);
            let png_err = |e: png::EncodingError| Error::InvalidArgument(format!("png encoding: {e}"));
            let mut w = enc.write_header().map_err(png_err)?;
            w.write_image_data(&self.data).map_err(png_err)?;
        }
        Ok(out)
    }

    pub fn encode(&self, format: RasterFormat) -> Result<Vec<u8>> {
        match format {
            RasterFormat::Pgm => Ok(self.encode_pgm()),
            RasterFormat::Png => self.encode_png(),
        }
    }

    /// Writes in the format implied by the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode(RasterFormat::from_path(path)?)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

/// Tiles the set into one row per class and one column per image, with a
/// `gap`-pixel black border. Pixels are denormalized and clamped to `[0, 1]`.
pub fn synthetic_grid(set: &SyntheticSet, gap: usize) -> Raster {
    let (h, w, ch) = (set.height, set.width, set.channels);
    let width = set.ipc * (w + gap) + gap;
    let height = set.classes * (h + gap) + gap;
    let out_ch = if ch == 3 { 3 } else { 1 };
    let mut data = vec![0u8; width * height * out_ch];
    let mut pixels = set.pixels.clone();
    set.normalization.denormalize(&mut pixels, h * w);
    for (k, img) in pixels.chunks_exact(set.image_len()).enumerate() {
        let (row, col) = (k / set.ipc, k % set.ipc);
        let (oy, ox) = (gap + row * (h + gap), gap + col * (w + gap));
        for y in 0..h {
            for x in 0..w {
                for c in 0..out_ch {
                    data[((oy + y) * width + ox + x) * out_ch + c] = to_byte(img[(c * h + y) * w + x]);
                }
            }
        }
    }
    Raster {
        width,
        height,
        channels: out_ch,
        data,
    }
}

/// Grayscale heat map of non-negative `values` laid out `[height, width]`,
/// scaled so the maximum is white.
pub fn heat_map(values: &[f64], height: usize, width: usize) -> Raster {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let data = values
        .iter()
        .map(|&v| if max > 0.0 { to_byte(v / max) } else { 0 })
        .collect();
    Raster {
        width,
        height,
        channels: 1,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;

    #[test]
    fn grid_has_one_row_per_class() {
        let set = SyntheticSet {
            classes: 3,
            ipc: 2,
            channels: 1,
            height: 4,
            width: 5,
            normalization: Normalization::identity(1),
            pixels: vec![1.0; 3 * 2 * 20],
        };
        let r = synthetic_grid(&set, 1);
        assert_eq!((r.width, r.height), (2 * 6 + 1, 3 * 5 + 1));
        let lit = r.data.iter().filter(|&&v| v == 255).count();
        assert_eq!(lit, 3 * 2 * 20);
    }

    #[test]
    fn pgm_header() {
        let r = heat_map(&[0.0, 1.0, 2.0, 4.0], 2, 2);
        let bytes = r.encode_pgm();
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 64, 128, 255]);
    }

    #[test]
    fn png_signature() {
        let r = heat_map(&[1.0; 6], 2, 3);
        assert!(r.encode_png().unwrap().starts_with(&[0x89, b'P', b'N', b'G']));
    }
}
