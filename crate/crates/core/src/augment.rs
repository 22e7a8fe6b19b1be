//! Differentiable augmentation with shared randomness.
//!
//! One [`AugSpec`] is drawn per distillation step and applied to both the
//! real and the synthetic batch, so the two see the same transformation.
//! Given a spec, every transformation is a fixed linear map of the pixels
//! (brightness is affine), so gradients pass through to synthetic images.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ops::{self, BlendScope, SampleMap};
use crate::tensor::Tensor;

pub const BRIGHTNESS_RANGE: f64 = 0.25;
pub const SATURATION_RANGE: (f64, f64) = (0.0, 2.0);
pub const CONTRAST_RANGE: (f64, f64) = (0.5, 1.5);
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.2);
pub const ROTATE_DEGREES: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    Crop,
    ColorJitter,
    Cutout,
    Flip,
    Scale,
    Rotate,
}

impl AugOp {
    pub const ALL: [AugOp; 6] = [
        AugOp::Crop,
        AugOp::ColorJitter,
        AugOp::Cutout,
        AugOp::Flip,
        AugOp::Scale,
        AugOp::Rotate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugOp::Crop => "crop",
            AugOp::ColorJitter => "color_jitter",
            AugOp::Cutout => "cutout",
            AugOp::Flip => "flip",
            AugOp::Scale => "scale",
            AugOp::Rotate => "rotate",
        }
    }
}

impl fmt::Display for AugOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugOp {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AugOp::ALL
            .into_iter()
            .find(|op| op.name() == s || (s == "color" && *op == AugOp::ColorJitter))
            .ok_or_else(|| Error::Config(format!("unknown augmentation {s:?}")))
    }
}

/// Sampled parameters of one augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugParams {
    /// Translation by whole pixels with zero fill.
    Crop { dx: i64, dy: i64 },
    /// Brightness offset, then saturation and contrast blend factors.
    ColorJitter {
        brightness: f64,
        saturation: f64,
        contrast: f64,
    },
    /// Zeroes a `size x size` box centred at `(cy, cx)`, clipped to the image.
    Cutout { cy: usize, cx: usize, size: usize },
    Flip { flip: bool },
    Scale { factor: f64 },
    Rotate { degrees: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugSpec {
    pub params: AugParams,
    /// Seed of the stream the spec was drawn from.
    pub seed: u64,
}

impl AugSpec {
    pub fn op(&self) -> AugOp {
        match self.params {
            AugParams::Crop { .. } => AugOp::Crop,
            AugParams::ColorJitter { .. } => AugOp::ColorJitter,
            AugParams::Cutout { .. } => AugOp::Cutout,
            AugParams::Flip { .. } => AugOp::Flip,
            AugParams::Scale { .. } => AugOp::Scale,
            AugParams::Rotate { .. } => AugOp::Rotate,
        }
    }
}

/// Picks one operation uniformly from `palette` and draws its parameters
/// for `channels x height x width` images:
///
/// | op      | parameters                                              |
/// |---------|---------------------------------------------------------|
/// | crop    | `dx, dy` in `[-H/8, H/8]` (integers)                    |
/// | color   | brightness in `[-0.25, 0.25]`; RGB also saturation in `[0, 2]`, contrast in `[0.5, 1.5]` |
/// | cutout  | `H/2` box at a uniform centre                           |
/// | flip    | fair coin                                               |
/// | scale   | factor in `[0.8, 1.2]`                                  |
/// | rotate  | angle in `[-15, 15]` degrees                            |
pub fn sample_aug(rng: &mut Rng, palette: &[AugOp], channels: usize, height: usize, width: usize) -> Result<AugSpec> {
    if palette.is_empty() {
        return Err(Error::InvalidArgument("augmentation palette is empty".into()));
    }
    let seed = rng.seed();
    let op = palette[rng.below(palette.len())];
    let params = match op {
        AugOp::Crop => {
            let s = (height / 8) as i64;
            let sx = (width / 8) as i64;
            AugParams::Crop {
                dx: rng.int_in(-sx, sx),
                dy: rng.int_in(-s, s),
            }
        }
        AugOp::ColorJitter => {
            let brightness = rng.uniform_in(-BRIGHTNESS_RANGE, BRIGHTNESS_RANGE);
            let (saturation, contrast) = if channels >= 3 {
                (
                    rng.uniform_in(SATURATION_RANGE.0, SATURATION_RANGE.1),
                    rng.uniform_in(CONTRAST_RANGE.0, CONTRAST_RANGE.1),
                )
            } else {
                (1.0, 1.0)
            };
            AugParams::ColorJitter {
                brightness,
                saturation,
                contrast,
            }
        }
        AugOp::Cutout => AugParams::Cutout {
            cy: rng.below(height),
            cx: rng.below(width),
            size: height / 2,
        },
        AugOp::Flip => AugParams::Flip { flip: rng.coin() },
        AugOp::Scale => AugParams::Scale {
            factor: rng.uniform_in(SCALE_RANGE.0, SCALE_RANGE.1),
        },
        AugOp::Rotate => AugParams::Rotate {
            degrees: rng.uniform_in(-ROTATE_DEGREES, ROTATE_DEGREES),
        },
    };
    Ok(AugSpec { params, seed })
}

/// Applies `spec` to a batch `[N, C, H, W]`.
pub fn apply_aug(spec: &AugSpec, x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::shape("apply_aug", format!("expected [N, C, H, W], got {:?}", x.shape())));
    }
    let (h, w) = (x.shape()[2], x.shape()[3]);
    match spec.params {
        AugParams::Flip { flip } => {
            if flip {
                ops::hflip(x)
            } else {
                Ok(x.clone())
            }
        }
        AugParams::Crop { dx, dy } => {
            let m = [[1.0, 0.0, -(dx as f64)], [0.0, 1.0, -(dy as f64)]];
            ops::resample(x, &Rc::new(SampleMap::affine(h, w, m)))
        }
        AugParams::Scale { factor } => {
            let inv = 1.0 / factor;
            let m = [[inv, 0.0, 0.0], [0.0, inv, 0.0]];
            ops::resample(x, &Rc::new(SampleMap::affine(h, w, m)))
        }
        AugParams::Rotate { degrees } => {
            // Output reads the input rotated back by the angle.
            let (s, c) = degrees.to_radians().sin_cos();
            let m = [[c, s, 0.0], [-s, c, 0.0]];
            ops::resample(x, &Rc::new(SampleMap::affine(h, w, m)))
        }
        AugParams::Cutout { cy, cx, size } => {
            let mask = cutout_mask(x.shape(), cy, cx, size);
            ops::mul_const(x, &Rc::new(mask))
        }
        AugParams::ColorJitter {
            brightness,
            saturation,
            contrast,
        } => {
            let mut y = ops::add_scalar(x, brightness);
            if saturation != 1.0 {
                y = ops::image_blend(&y, saturation, 1.0 - saturation, BlendScope::Channels)?;
            }
            if contrast != 1.0 {
                y = ops::image_blend(&y, contrast, 1.0 - contrast, BlendScope::Image)?;
            }
            Ok(y)
        }
    }
}

fn cutout_mask(shape: &[usize], cy: usize, cx: usize, size: usize) -> Vec<f64> {
    let (h, w) = (shape[2], shape[3]);
    let half = size as isize / 2;
    let rows = (cy as isize - half).max(0) as usize..((cy as isize - half + size as isize).max(0) as usize).min(h);
    let cols = (cx as isize - half).max(0) as usize..((cx as isize - half + size as isize).max(0) as usize).min(w);
    let mut plane = vec![1.0; h * w];
    for i in rows {
        for j in cols.clone() {
            plane[i * w + j] = 0.0;
        }
    }
    let planes = shape[0] * shape[1];
    let mut mask = Vec::with_capacity(planes * h * w);
    for _ in 0..planes {
        mask.extend_from_slice(&plane);
    }
    mask
}

/// Parses a comma-separated palette such as
/// `"crop,color_jitter,cutout,flip,scale,rotate"`. The empty string and
/// `"none"` mean no augmentation.
pub fn parse_palette(s: &str) -> Result<Vec<AugOp>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse()).collect()
}

/// Inverse of [`parse_palette`].
pub fn palette_string(palette: &[AugOp]) -> String {
    if palette.is_empty() {
        return "none".into();
    }
    palette.iter().map(|op| op.name()).collect::<Vec<_>>().join(",")
}
