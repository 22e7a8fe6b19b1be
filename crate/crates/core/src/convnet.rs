//! The ConvNet feature extractor and classifier head.
//!
//! Each block is `conv3x3(width) -> [instance norm] -> ReLU -> avg_pool2`;
//! features are the flattened output of the last block and the head is a
//! single dense layer. Parameters are plain buffers ([`NetworkParams`]) so
//! they can be shared across threads; [`BoundNet`] turns them into tensors on
//! the current thread's tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{ops, Tensor};

/// Paper width of every convolutional layer.
pub const DEFAULT_WIDTH: usize = 128;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub blocks: usize,
    /// Output channels of every convolution.
    pub net_width: usize,
    pub instance_norm: bool,
}

impl Architecture {
    /// The default network for an input geometry: 128-wide convolutions, no
    /// normalization, 3 blocks for inputs up to 32x32 and one more per
    /// doubling beyond.
    pub fn for_input(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        let mut blocks = 3;
        while height.max(width) >> blocks > 4 {
            blocks += 1;
        }
        Architecture {
            channels,
            height,
            width,
            classes,
            blocks,
            net_width: DEFAULT_WIDTH,
            instance_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidArgument("a ConvNet needs at least one block".into()));
        }
        if self.channels == 0 || self.classes == 0 || self.net_width == 0 {
            return Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        let div = 1usize << self.blocks;
        if !self.height.is_multiple_of(div) || !self.width.is_multiple_of(div) || self.height < div || self.width < div {
            return Err(Error::InvalidArgument(format!(
                "{}x{} input is not divisible by 2^{} = {div}",
                self.height, self.width, self.blocks
            )));
        }
        Ok(())
    }

    /// Spatial extent of the final feature maps.
    pub fn feature_hw(&self) -> (usize, usize) {
        (self.height >> self.blocks, self.width >> self.blocks)
    }

    /// Length of the flattened feature vector.
    pub fn feature_dim(&self) -> usize {
        let (h, w) = self.feature_hw();
        self.net_width * h * w
    }

    fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            self.channels
        } else {
            self.net_width
        }
    }
}

/// One sample of network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    /// Per block, `[width, cin, 3, 3]` row-major.
    pub conv_w: Vec<Vec<f64>>,
    /// Per block, `[width]`.
    pub conv_b: Vec<Vec<f64>>,
    /// Per block instance-norm scale and shift (empty without normalization).
    pub norm_scale: Vec<Vec<f64>>,
    pub norm_shift: Vec<Vec<f64>>,
    /// `[feature_dim, classes]`.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub seed: u64,
}

impl NetworkParams {
    /// Draws parameters with He-uniform fan-in initialization: weights from
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero biases, unit norm scales.
    pub fn init(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let seed = rng.seed();
        let mut he = |len: usize, fan_in: usize| -> Vec<f64> {
            let bound = (6.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.uniform_in(-bound, bound)).collect()
        };
        let mut conv_w = Vec::with_capacity(arch.blocks);
        for b in 0..arch.blocks {
            let cin = arch.block_in_channels(b);
            conv_w.push(he(arch.net_width * cin * 9, cin * 9));
        }
        let d = arch.feature_dim();
        let head_w = he(d * arch.classes, d);
        let norm_blocks = if arch.instance_norm { arch.blocks } else { 0 };
        Ok(NetworkParams {
            arch,
            conv_w,
            conv_b: vec![vec![0.0; arch.net_width]; arch.blocks],
            norm_scale: vec![vec![1.0; arch.net_width]; norm_blocks],
            norm_shift: vec![vec![0.0; arch.net_width]; norm_blocks],
            head_w,
            head_b: vec![0.0; arch.classes],
            seed,
        })
    }

    /// All parameter buffers in a fixed order (conv weights and biases per
    /// block, norm scale and shift per block, head weight, head bias).
    pub fn buffers(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = Vec::new();
        for b in 0..self.arch.blocks {
            out.push(&self.conv_w[b]);
            out.push(&self.conv_b[b]);
        }
        out.extend(self.norm_scale.iter());
        out.extend(self.norm_shift.iter());
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for (w, b) in self.conv_w.iter_mut().zip(self.conv_b.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out.extend(self.norm_scale.iter_mut());
        out.extend(self.norm_shift.iter_mut());
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }

    /// Binds the parameters to the tape. With `trainable`, every buffer
    /// becomes a gradient-accumulating leaf.
    pub fn bind(&self, trainable: bool) -> Result<BoundNet> {
        let a = &self.arch;
        let make = |shape: &[usize], data: &Vec<f64>| {
            if trainable {
                Tensor::param(shape, data.clone())
            } else {
                Tensor::new(shape, data.clone())
            }
        };
        let mut blocks = Vec::with_capacity(a.blocks);
        for b in 0..a.blocks {
            let cin = a.block_in_channels(b);
            let norm = if a.instance_norm {
                Some((
                    make(&[a.net_width], &self.norm_scale[b])?,
                    make(&[a.net_width], &self.norm_shift[b])?,
                ))
            } else {
                None
            };
            blocks.push(BlockTensors {
                w: make(&[a.net_width, cin, 3, 3], &self.conv_w[b])?,
                b: make(&[a.net_width], &self.conv_b[b])?,
                norm,
            });
        }
        Ok(BoundNet {
            arch: *a,
            blocks,
            head_w: make(&[a.feature_dim(), a.classes], &self.head_w)?,
            head_b: make(&[a.classes], &self.head_b)?,
        })
    }
}

struct BlockTensors {
    w: Tensor,
    b: Tensor,
    norm: Option<(Tensor, Tensor)>,
}

/// Parameters living on the current thread's tape.
pub struct BoundNet {
    pub arch: Architecture,
    blocks: Vec<BlockTensors>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl BoundNet {
    /// Parameter tensors in the same order as [`NetworkParams::buffers`].
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.w.clone());
            out.push(b.b.clone());
        }
        for b in &self.blocks {
            if let Some((s, _)) = &b.norm {
                out.push(s.clone());
            }
        }
        for b in &self.blocks {
            if let Some((_, t)) = &b.norm {
                out.push(t.clone());
            }
        }
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }

    /// Conv weight tensors, one per block.
    pub fn conv_weights(&self) -> Vec<Tensor> {
        self.blocks.iter().map(|b| b.w.clone()).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let a = &self.arch;
        if x.rank() != 4 || x.shape()[1..] != [a.channels, a.height, a.width] {
            return Err(Error::shape(
                "convnet",
                format!("input {:?}, network expects [N, {}, {}, {}]", x.shape(), a.channels, a.height, a.width),
            ));
        }
        Ok(())
    }

    /// Output of the last block, `[N, width, h, w]`, before flattening.
    pub fn feature_maps(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for blk in &self.blocks {
            h = ops::conv2d(&h, &blk.w, &blk.b, 1)?;
            if let Some((scale, shift)) = &blk.norm {
                h = instance_norm(&h, scale, shift)?;
            }
            h = ops::avg_pool2(&ops::relu(&h))?;
        }
        Ok(h)
    }

    /// Flattened convolutional features `[N, feature_dim]`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        ops::flatten(&self.feature_maps(x)?)
    }

    /// Classifier scores `[N, classes]`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        ops::dense(&self.features(x)?, &self.head_w, &self.head_b)
    }
}

/// Per-sample, per-channel normalization over the spatial axes followed by a
/// per-channel affine map.
fn instance_norm(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let inv_hw = 1.0 / (h * w) as f64;
    let mean = ops::spatial_expand(&ops::scale(&ops::spatial_sum(x)?, inv_hw), h, w)?;
    let centered = ops::sub(x, &mean)?;
    let var = ops::scale(&ops::spatial_sum(&ops::mul(&centered, &centered)?)?, inv_hw);
    let inv_std = ops::spatial_expand(&ops::rsqrt(&ops::add_scalar(&var, NORM_EPS)), h, w)?;
    let normed = ops::mul(&centered, &inv_std)?;
    let scaled = ops::mul(&normed, &ops::channel_broadcast(scale, s)?)?;
    ops::add_channel_bias(&scaled, shift)
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {:?} for {} labels", logits.shape(), labels.len()),
        ));
    }
    let k = logits.shape()[1];
    let mut onehot = vec![0.0; logits.numel()];
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::InvalidArgument(format!("label {l} outside [0, {k})")));
        }
        onehot[i * k + l] = 1.0;
    }
    let picked = ops::mul_const(&ops::log_softmax(logits)?, &std::rc::Rc::new(onehot))?;
    Ok(ops::scale(&ops::sum(&picked), -1.0 / labels.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Architecture {
        Architecture {
            channels: 1,
            height: 8,
            width: 8,
            classes: 3,
            blocks: 2,
            net_width: 4,
            instance_norm: false,
        }
    }

    #[test]
    fn feature_dim_for_cifar_geometry() {
        let a = Architecture::for_input(3, 32, 32, 10);
        assert_eq!(a.blocks, 3);
        assert_eq!(a.feature_dim(), 2048);
        assert_eq!(Architecture::for_input(3, 64, 64, 200).blocks, 4);
        // MNIST padded to 32x32 keeps the same geometry.
        assert_eq!(Architecture::for_input(1, 32, 32, 10).feature_dim(), 2048);
    }

    #[test]
    fn init_is_deterministic() {
        let a = small_arch();
        let p1 = NetworkParams::init(a, &mut Rng::new(11)).unwrap();
        let p2 = NetworkParams::init(a, &mut Rng::new(11)).unwrap();
        assert_eq!(p1, p2);
        let p3 = NetworkParams::init(a, &mut Rng::new(12)).unwrap();
        assert_ne!(p1.conv_w, p3.conv_w);
    }

    #[test]
    fn init_rejects_indivisible_input() {
        let mut a = small_arch();
        a.height = 28;
        a.blocks = 3;
        assert!(NetworkParams::init(a, &mut Rng::new(0)).is_err());
        a.blocks = 0;
        assert!(NetworkParams::init(a, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let p = NetworkParams::init(small_arch(), &mut Rng::new(1)).unwrap();
        let net = p.bind(false).unwrap();
        let x = Tensor::zeros(&[2, 1, 8, 8]).unwrap();
        let f = net.features(&x).unwrap();
        assert_eq!(f.shape(), &[2, 4 * 2 * 2]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_head_gives_bias_logits() {
        let mut p = NetworkParams::init(small_arch(), &mut Rng::new(1)).unwrap();
        p.head_w.iter_mut().for_each(|v| *v = 0.0);
        p.head_b = vec![0.5, -1.0, 2.0];
        let net = p.bind(false).unwrap();
        let x = Tensor::new(&[2, 1, 8, 8], (0..128).map(|i| (i as f64).sin()).collect()).unwrap();
        let z = net.logits(&x).unwrap();
        assert_eq!(z.shape(), &[2, 3]);
        assert_eq!(z.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let p = NetworkParams::init(small_arch(), &mut Rng::new(1)).unwrap();
        let net = p.bind(false).unwrap();
        assert!(net.features(&Tensor::zeros(&[1, 2, 8, 8]).unwrap()).is_err());
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let z = Tensor::zeros(&[4, 10]).unwrap();
        let l = cross_entropy(&z, &[0, 3, 9, 5]).unwrap().item().unwrap();
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((l - std::f64::consts::LN_10).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_of_confident_logits() {
        let mut z = vec![0.0; 10];
        z[2] = 800.0;
        let l = cross_entropy(&Tensor::new(&[1, 10], z).unwrap(), &[2]).unwrap().item().unwrap();
        assert!(l.abs() < 1e-12 && l >= 0.0);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let z = Tensor::zeros(&[1, 3]).unwrap();
        assert!(cross_entropy(&z, &[3]).is_err());
    }

    #[test]
    fn instance_norm_zero_mean_unit_var() {
        let mut a = small_arch();
        a.instance_norm = true;
        let p = NetworkParams::init(a, &mut Rng::new(4)).unwrap();
        let x = Tensor::new(&[1, 4, 4, 4], (0..64).map(|i| (i as f64 * 1.7).sin() * 3.0 + 1.0).collect()).unwrap();
        let scale = Tensor::new(&[4], vec![1.0; 4]).unwrap();
        let shift = Tensor::new(&[4], vec![0.0; 4]).unwrap();
        let y = instance_norm(&x, &scale, &shift).unwrap();
        for plane in y.data().chunks(16) {
            let m: f64 = plane.iter().sum::<f64>() / 16.0;
            let v: f64 = plane.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
        assert_eq!(p.buffers().len(), 2 * 2 + 2 * 2 + 2);
    }
}
