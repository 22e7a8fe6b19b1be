//! Differentiable operations.
//!
//! Every backward rule below is expressed through other functions of this
//! module, never through raw buffers, so gradients can be recorded and
//! differentiated a second time. Linear operations come in adjoint pairs
//! (sum/expand, avg_pool2/upsample, slice/pad, resample/resample_adjoint) and
//! the three faces of convolution (forward, input gradient, weight gradient)
//! close over each other.

use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::{GradFn, Tensor};
use crate::error::{Error, Result};

type Grads = Result<Vec<Option<Tensor>>>;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn expect_rank(op: &'static str, x: &Tensor, rank: usize) -> Result<()> {
    if x.rank() != rank {
        return Err(Error::shape(op, format!("expected rank {rank}, got {:?}", x.shape())));
    }
    Ok(())
}

fn dims4(x: &Tensor) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

/// Only evaluates `f` for inputs that need a gradient.
fn when(input: &Tensor, f: impl FnOnce() -> Result<Tensor>) -> Result<Option<Tensor>> {
    if input.requires_grad() {
        f().map(Some)
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// Elementwise

struct AddOp;
impl GradFn for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(g.clone()), Some(g.clone())])
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, AddOp, vec![a.clone(), b.clone()]))
}

struct SubOp;
impl GradFn for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(g.clone()), when(&inputs[1], || Ok(scale(g, -1.0)))?])
    }
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("sub", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, SubOp, vec![a.clone(), b.clone()]))
}

struct MulOp;
impl GradFn for MulOp {
    fn name(&self) -> &'static str {
        "mul"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        let (a, b) = (&inputs[0], &inputs[1]);
        Ok(vec![when(a, || mul(g, b))?, when(b, || mul(g, a))?])
    }
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(a.shape().to_vec(), data, MulOp, vec![a.clone(), b.clone()]))
}

struct ScaleOp(f64);
impl GradFn for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(scale(g, self.0))])
    }
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    let data = x.data().iter().map(|v| v * c).collect();
    Tensor::from_op(x.shape().to_vec(), data, ScaleOp(c), vec![x.clone()])
}

struct ShiftOp;
impl GradFn for ShiftOp {
    fn name(&self) -> &'static str {
        "add_const"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(g.clone())])
    }
}

pub fn add_scalar(x: &Tensor, c: f64) -> Tensor {
    let data = x.data().iter().map(|v| v + c).collect();
    Tensor::from_op(x.shape().to_vec(), data, ShiftOp, vec![x.clone()])
}

/// `x + c` for a constant `c` of the same length.
pub fn add_const(x: &Tensor, c: &[f64]) -> Result<Tensor> {
    if c.len() != x.numel() {
        return Err(Error::shape("add_const", format!("{} values for {:?}", c.len(), x.shape())));
    }
    let data = x.data().iter().zip(c).map(|(v, c)| v + c).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), data, ShiftOp, vec![x.clone()]))
}

struct MulConstOp(Rc<Vec<f64>>);
impl GradFn for MulConstOp {
    fn name(&self) -> &'static str {
        "mul_const"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(mul_const(g, &self.0)?)])
    }
}

/// Elementwise product with a constant (masks, one-hot selections).
pub fn mul_const(x: &Tensor, c: &Rc<Vec<f64>>) -> Result<Tensor> {
    if c.len() != x.numel() {
        return Err(Error::shape("mul_const", format!("{} values for {:?}", c.len(), x.shape())));
    }
    let data = x.data().iter().zip(c.iter()).map(|(v, c)| v * c).collect();
    Ok(Tensor::from_op(x.shape().to_vec(), data, MulConstOp(c.clone()), vec![x.clone()]))
}

struct ReluOp;
impl GradFn for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        // Subgradient at exactly 0 is 0.
        let mask: Vec<f64> = inputs[0].data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        Ok(vec![Some(mul_const(g, &Rc::new(mask))?)])
    }
}

/// `max(0, x)`; the derivative at 0 is taken to be 0. NaN passes through.
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 }).collect();
    Tensor::from_op(x.shape().to_vec(), data, ReluOp, vec![x.clone()])
}

struct RsqrtOp;
impl GradFn for RsqrtOp {
    fn name(&self) -> &'static str {
        "rsqrt"
    }
    fn backward(&self, _: &[Tensor], out: &Tensor, g: &Tensor) -> Grads {
        // d/dx x^(-1/2) = -1/2 * out^3
        let cube = mul(out, &mul(out, out)?)?;
        Ok(vec![Some(mul(g, &scale(&cube, -0.5))?)])
    }
}

/// `1 / sqrt(x)`.
pub fn rsqrt(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|v| 1.0 / v.sqrt()).collect();
    Tensor::from_op(x.shape().to_vec(), data, RsqrtOp, vec![x.clone()])
}

// ---------------------------------------------------------------------------
// Reductions and their broadcasting adjoints

struct SumOp;
impl GradFn for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(expand(g, inputs[0].shape())?)])
    }
}

/// Sum of all elements, as a `[1]` tensor.
pub fn sum(x: &Tensor) -> Tensor {
    Tensor::from_op(vec![1], vec![x.sum_value()], SumOp, vec![x.clone()])
}

pub fn mean(x: &Tensor) -> Tensor {
    scale(&sum(x), 1.0 / x.numel() as f64)
}

struct ExpandOp;
impl GradFn for ExpandOp {
    fn name(&self) -> &'static str {
        "expand"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(sum(g))])
    }
}

/// Broadcasts a one-element tensor to `shape`.
pub fn expand(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let v = x.item()?;
    Ok(Tensor::from_op(shape.to_vec(), vec![v; shape.iter().product()], ExpandOp, vec![x.clone()]))
}

struct SumRowsOp;
impl GradFn for SumRowsOp {
    fn name(&self) -> &'static str {
        "sum_rows"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(broadcast_rows(g, inputs[0].shape()[0])?)])
    }
}

/// `[N, D] -> [D]`, summing over the leading axis.
pub fn sum_rows(x: &Tensor) -> Result<Tensor> {
    expect_rank("sum_rows", x, 2)?;
    let d = x.shape()[1];
    let mut out = vec![0.0; d];
    for row in x.data().chunks_exact(d) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
    Ok(Tensor::from_op(vec![d], out, SumRowsOp, vec![x.clone()]))
}

/// `[N, D] -> [D]`, averaging over the leading axis.
pub fn mean_rows(x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0] as f64;
    Ok(scale(&sum_rows(x)?, 1.0 / n))
}

struct BroadcastRowsOp;
impl GradFn for BroadcastRowsOp {
    fn name(&self) -> &'static str {
        "broadcast_rows"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(sum_rows(g)?)])
    }
}

/// `[D] -> [n, D]`, repeating the vector as every row.
pub fn broadcast_rows(x: &Tensor, n: usize) -> Result<Tensor> {
    expect_rank("broadcast_rows", x, 1)?;
    let d = x.numel();
    let data = x.data().iter().copied().cycle().take(n * d).collect();
    Ok(Tensor::from_op(vec![n, d], data, BroadcastRowsOp, vec![x.clone()]))
}

struct RowSumOp;
impl GradFn for RowSumOp {
    fn name(&self) -> &'static str {
        "row_sum"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(broadcast_cols(g, inputs[0].shape()[1])?)])
    }
}

/// `[N, K] -> [N]`, summing each row.
pub fn row_sum(x: &Tensor) -> Result<Tensor> {
    expect_rank("row_sum", x, 2)?;
    let k = x.shape()[1];
    let data = x.data().chunks_exact(k).map(|r| r.iter().sum()).collect();
    Ok(Tensor::from_op(vec![x.shape()[0]], data, RowSumOp, vec![x.clone()]))
}

struct BroadcastColsOp;
impl GradFn for BroadcastColsOp {
    fn name(&self) -> &'static str {
        "broadcast_cols"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(row_sum(g)?)])
    }
}

/// `[N] -> [N, k]`, repeating each entry along its row.
pub fn broadcast_cols(x: &Tensor, k: usize) -> Result<Tensor> {
    expect_rank("broadcast_cols", x, 1)?;
    let data = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
    Ok(Tensor::from_op(vec![x.numel(), k], data, BroadcastColsOp, vec![x.clone()]))
}

struct ChannelSumOp;
impl GradFn for ChannelSumOp {
    fn name(&self) -> &'static str {
        "channel_sum"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(channel_broadcast(g, inputs[0].shape())?)])
    }
}

/// `[N, C, H, W] -> [C]`.
pub fn channel_sum(x: &Tensor) -> Result<Tensor> {
    expect_rank("channel_sum", x, 4)?;
    let (n, c, h, w) = dims4(x);
    let mut out = vec![0.0; c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let start = (i * c + ch) * h * w;
            *o += x.data()[start..start + h * w].iter().sum::<f64>();
        }
    }
    Ok(Tensor::from_op(vec![c], out, ChannelSumOp, vec![x.clone()]))
}

struct ChannelBroadcastOp;
impl GradFn for ChannelBroadcastOp {
    fn name(&self) -> &'static str {
        "channel_broadcast"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(channel_sum(g)?)])
    }
}

/// `[C] -> shape` where `shape = [N, C, H, W]`.
pub fn channel_broadcast(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    expect_rank("channel_broadcast", x, 1)?;
    if shape.len() != 4 || shape[1] != x.numel() {
        return Err(Error::shape("channel_broadcast", format!("{:?} into {shape:?}", x.shape())));
    }
    let plane = shape[2] * shape[3];
    let mut data = Vec::with_capacity(shape.iter().product());
    for _ in 0..shape[0] {
        for &v in x.data() {
            data.extend(std::iter::repeat_n(v, plane));
        }
    }
    Ok(Tensor::from_op(shape.to_vec(), data, ChannelBroadcastOp, vec![x.clone()]))
}

/// Adds a per-channel bias `[C]` to `[N, C, H, W]`.
pub fn add_channel_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    add(x, &channel_broadcast(b, x.shape())?)
}

struct SpatialSumOp;
impl GradFn for SpatialSumOp {
    fn name(&self) -> &'static str {
        "spatial_sum"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        let s = inputs[0].shape();
        Ok(vec![Some(spatial_expand(g, s[2], s[3])?)])
    }
}

/// `[N, C, H, W] -> [N, C]`, summing each plane.
pub fn spatial_sum(x: &Tensor) -> Result<Tensor> {
    expect_rank("spatial_sum", x, 4)?;
    let (n, c, h, w) = dims4(x);
    let data = x.data().chunks_exact(h * w).map(|p| p.iter().sum()).collect();
    Ok(Tensor::from_op(vec![n, c], data, SpatialSumOp, vec![x.clone()]))
}

struct SpatialExpandOp;
impl GradFn for SpatialExpandOp {
    fn name(&self) -> &'static str {
        "spatial_expand"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(spatial_sum(g)?)])
    }
}

/// `[N, C] -> [N, C, h, w]`, filling each plane with its value.
pub fn spatial_expand(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    expect_rank("spatial_expand", x, 2)?;
    let data = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, h * w)).collect();
    let s = x.shape();
    Ok(Tensor::from_op(vec![s[0], s[1], h, w], data, SpatialExpandOp, vec![x.clone()]))
}

// ---------------------------------------------------------------------------
// Shape manipulation

struct ReshapeOp;
impl GradFn for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(reshape(g, inputs[0].shape())?)])
    }
}

pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() || shape.contains(&0) {
        return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", x.shape())));
    }
    Ok(Tensor::from_op(shape.to_vec(), x.to_vec(), ReshapeOp, vec![x.clone()]))
}

/// `[N, ...] -> [N, prod(...)]`.
pub fn flatten(x: &Tensor) -> Result<Tensor> {
    let n = x.shape()[0];
    reshape(x, &[n, x.numel() / n])
}

struct TransposeOp;
impl GradFn for TransposeOp {
    fn name(&self) -> &'static str {
        "transpose"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(transpose(g)?)])
    }
}

pub fn transpose(x: &Tensor) -> Result<Tensor> {
    expect_rank("transpose", x, 2)?;
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let mut data = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            data[j * r + i] = x.data()[i * c + j];
        }
    }
    Ok(Tensor::from_op(vec![c, r], data, TransposeOp, vec![x.clone()]))
}

struct MatmulOp;
impl GradFn for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        let (a, b) = (&inputs[0], &inputs[1]);
        Ok(vec![
            when(a, || matmul(g, &transpose(b)?))?,
            when(b, || matmul(&transpose(a)?, g))?,
        ])
    }
}

/// `[M, K] x [K, N] -> [M, N]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("matmul", a, 2)?;
    expect_rank("matmul", b, 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape("matmul", format!("inner dims {:?} x {:?}", a.shape(), b.shape())));
    }
    let data = kernels::matmul(a.data(), b.data(), m, k, n, false, false);
    Ok(Tensor::from_op(vec![m, n], data, MatmulOp, vec![a.clone(), b.clone()]))
}

/// Affine map `x w + b` for `x: [N, D]`, `w: [D, K]`, `b: [K]`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let y = matmul(x, w)?;
    if b.rank() != 1 || b.numel() != y.shape()[1] {
        return Err(Error::shape("dense", format!("bias {:?} for output {:?}", b.shape(), y.shape())));
    }
    add(&y, &broadcast_rows(b, y.shape()[0])?)
}

// ---------------------------------------------------------------------------
// Softmax family

struct SoftmaxOp;
impl GradFn for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }
    fn backward(&self, _: &[Tensor], s: &Tensor, g: &Tensor) -> Grads {
        // ds = s * (g - rowsum(g * s))
        let k = s.shape()[1];
        let inner = broadcast_cols(&row_sum(&mul(g, s)?)?, k)?;
        Ok(vec![Some(mul(s, &sub(g, &inner)?)?)])
    }
}

fn softmax_rows(data: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    out
}

/// Row-wise softmax of `[N, K]`, stabilized by subtracting the row max.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    expect_rank("softmax", x, 2)?;
    let data = softmax_rows(x.data(), x.shape()[1]);
    Ok(Tensor::from_op(x.shape().to_vec(), data, SoftmaxOp, vec![x.clone()]))
}

struct LogSoftmaxOp;
impl GradFn for LogSoftmaxOp {
    fn name(&self) -> &'static str {
        "log_softmax"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        // dz = g - softmax(z) * rowsum(g)
        let k = g.shape()[1];
        let s = softmax(&inputs[0])?;
        let inner = mul(&s, &broadcast_cols(&row_sum(g)?, k)?)?;
        Ok(vec![Some(sub(g, &inner)?)])
    }
}

/// Row-wise log-softmax of `[N, K]`.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    expect_rank("log_softmax", x, 2)?;
    let k = x.shape()[1];
    let mut data = Vec::with_capacity(x.numel());
    for row in x.data().chunks_exact(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|v| v - lse));
    }
    Ok(Tensor::from_op(x.shape().to_vec(), data, LogSoftmaxOp, vec![x.clone()]))
}

// ---------------------------------------------------------------------------
// Convolution

fn conv_geom(op: &'static str, x_shape: &[usize], w_shape: &[usize], pad: usize) -> Result<ConvGeom> {
    if x_shape.len() != 4 || w_shape.len() != 4 {
        return Err(Error::shape(op, format!("input {x_shape:?}, weight {w_shape:?}")));
    }
    if x_shape[1] != w_shape[1] {
        return Err(Error::shape(
            op,
            format!("input has {} channels, weight expects {}", x_shape[1], w_shape[1]),
        ));
    }
    let g = ConvGeom {
        n: x_shape[0],
        cin: x_shape[1],
        h: x_shape[2],
        w: x_shape[3],
        cout: w_shape[0],
        kh: w_shape[2],
        kw: w_shape[3],
        pad,
    };
    if g.h + 2 * pad < g.kh || g.w + 2 * pad < g.kw {
        return Err(Error::shape(op, format!("kernel {w_shape:?} larger than padded input {x_shape:?}")));
    }
    Ok(g)
}

struct Conv2dOp {
    pad: usize,
}
impl GradFn for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        let (x, w) = (&inputs[0], &inputs[1]);
        Ok(vec![
            when(x, || conv2d_input_grad(g, w, self.pad, x.shape()))?,
            when(w, || conv2d_weight_grad(x, g, self.pad, w.shape()))?,
        ])
    }
}

/// Stride-1 cross-correlation of `x: [N, Cin, H, W]` with `w: [Cout, Cin, kh, kw]`
/// and zero padding `pad`, without bias.
pub fn conv2d_nobias(x: &Tensor, w: &Tensor, pad: usize) -> Result<Tensor> {
    let g = conv_geom("conv2d", x.shape(), w.shape(), pad)?;
    let data = kernels::conv_forward(&g, x.data(), w.data());
    let shape = vec![g.n, g.cout, g.out_h(), g.out_w()];
    Ok(Tensor::from_op(shape, data, Conv2dOp { pad }, vec![x.clone(), w.clone()]))
}

struct Conv2dBiasOp {
    pad: usize,
}
impl GradFn for Conv2dBiasOp {
    fn name(&self) -> &'static str {
        "conv2d_bias"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        let (x, w, b) = (&inputs[0], &inputs[1], &inputs[2]);
        Ok(vec![
            when(x, || conv2d_input_grad(g, w, self.pad, x.shape()))?,
            when(w, || conv2d_weight_grad(x, g, self.pad, w.shape()))?,
            when(b, || channel_sum(g))?,
        ])
    }
}

/// Convolution followed by a per-output-channel bias `b: [Cout]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, pad: usize) -> Result<Tensor> {
    let g = conv_geom("conv2d", x.shape(), w.shape(), pad)?;
    if b.rank() != 1 || b.numel() != g.cout {
        return Err(Error::shape("conv2d", format!("bias {:?} for {} output channels", b.shape(), g.cout)));
    }
    let mut data = kernels::conv_forward(&g, x.data(), w.data());
    let plane = g.out_h() * g.out_w();
    for (i, chunk) in data.chunks_exact_mut(plane).enumerate() {
        let bias = b.data()[i % g.cout];
        chunk.iter_mut().for_each(|v| *v += bias);
    }
    let shape = vec![g.n, g.cout, g.out_h(), g.out_w()];
    let op = Conv2dBiasOp { pad };
    Ok(Tensor::from_op(shape, data, op, vec![x.clone(), w.clone(), b.clone()]))
}

struct ConvInputGradOp {
    pad: usize,
}
impl GradFn for ConvInputGradOp {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, u: &Tensor) -> Grads {
        let (gy, w) = (&inputs[0], &inputs[1]);
        Ok(vec![
            when(gy, || conv2d_nobias(u, w, self.pad))?,
            when(w, || conv2d_weight_grad(u, gy, self.pad, w.shape()))?,
        ])
    }
}

/// Gradient of `<conv2d(x, w), gy>` with respect to `x` (a transposed
/// convolution), for an input of shape `x_shape`.
pub fn conv2d_input_grad(gy: &Tensor, w: &Tensor, pad: usize, x_shape: &[usize]) -> Result<Tensor> {
    let g = conv_geom("conv2d_input_grad", x_shape, w.shape(), pad)?;
    if gy.shape() != [g.n, g.cout, g.out_h(), g.out_w()] {
        return Err(Error::shape("conv2d_input_grad", format!("upstream {:?}", gy.shape())));
    }
    let data = kernels::conv_input_grad(&g, gy.data(), w.data());
    Ok(Tensor::from_op(x_shape.to_vec(), data, ConvInputGradOp { pad }, vec![gy.clone(), w.clone()]))
}

struct ConvWeightGradOp {
    pad: usize,
}
impl GradFn for ConvWeightGradOp {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, u: &Tensor) -> Grads {
        let (x, gy) = (&inputs[0], &inputs[1]);
        Ok(vec![
            when(x, || conv2d_input_grad(gy, u, self.pad, x.shape()))?,
            when(gy, || conv2d_nobias(x, u, self.pad))?,
        ])
    }
}

/// Gradient of `<conv2d(x, w), gy>` with respect to `w`, for a weight of
/// shape `w_shape`.
pub fn conv2d_weight_grad(x: &Tensor, gy: &Tensor, pad: usize, w_shape: &[usize]) -> Result<Tensor> {
    let g = conv_geom("conv2d_weight_grad", x.shape(), w_shape, pad)?;
    if gy.shape() != [g.n, g.cout, g.out_h(), g.out_w()] {
        return Err(Error::shape("conv2d_weight_grad", format!("upstream {:?}", gy.shape())));
    }
    let data = kernels::conv_weight_grad(&g, x.data(), gy.data());
    Ok(Tensor::from_op(w_shape.to_vec(), data, ConvWeightGradOp { pad }, vec![x.clone(), gy.clone()]))
}

// ---------------------------------------------------------------------------
// Pooling

struct AvgPoolOp;
impl GradFn for AvgPoolOp {
    fn name(&self) -> &'static str {
        "avg_pool2"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(upsample2_quarter(g)?)])
    }
}

/// Mean over non-overlapping 2x2 windows. Height and width must be even.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    expect_rank("avg_pool2", x, 4)?;
    let (n, c, h, w) = dims4(x);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("avg_pool2", format!("odd spatial extent {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for (p, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(oh * ow)) {
        for i in 0..oh {
            for j in 0..ow {
                let a = p[2 * i * w + 2 * j] + p[2 * i * w + 2 * j + 1];
                let b = p[(2 * i + 1) * w + 2 * j] + p[(2 * i + 1) * w + 2 * j + 1];
                dst[i * ow + j] = (a + b) * 0.25;
            }
        }
    }
    Ok(Tensor::from_op(vec![n, c, oh, ow], out, AvgPoolOp, vec![x.clone()]))
}

struct UpsampleOp;
impl GradFn for UpsampleOp {
    fn name(&self) -> &'static str {
        "upsample2_quarter"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(avg_pool2(g)?)])
    }
}

/// Adjoint of [`avg_pool2`]: every value spread as a quarter over its 2x2
/// window.
pub fn upsample2_quarter(x: &Tensor) -> Result<Tensor> {
    expect_rank("upsample2_quarter", x, 4)?;
    let (n, c, h, w) = dims4(x);
    let ow = 2 * w;
    let mut out = vec![0.0; n * c * 4 * h * w];
    for (p, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(4 * h * w)) {
        for i in 0..h {
            for j in 0..w {
                let v = p[i * w + j] * 0.25;
                dst[2 * i * ow + 2 * j] = v;
                dst[2 * i * ow + 2 * j + 1] = v;
                dst[(2 * i + 1) * ow + 2 * j] = v;
                dst[(2 * i + 1) * ow + 2 * j + 1] = v;
            }
        }
    }
    Ok(Tensor::from_op(vec![n, c, 2 * h, 2 * w], out, UpsampleOp, vec![x.clone()]))
}

// ---------------------------------------------------------------------------
// Image-level operations

struct HflipOp;
impl GradFn for HflipOp {
    fn name(&self) -> &'static str {
        "hflip"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(hflip(g)?)])
    }
}

pub(crate) fn hflip_raw(data: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks_exact(w) {
        out.extend(row.iter().rev());
    }
    out
}

/// Reverses the width axis of `[N, C, H, W]`. Its own inverse and adjoint.
pub fn hflip(x: &Tensor) -> Result<Tensor> {
    expect_rank("hflip", x, 4)?;
    let data = hflip_raw(x.data(), x.shape()[3]);
    Ok(Tensor::from_op(x.shape().to_vec(), data, HflipOp, vec![x.clone()]))
}

struct ConcatOp;
impl GradFn for ConcatOp {
    fn name(&self) -> &'static str {
        "batch_concat"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        let na = inputs[0].shape()[0];
        let nb = inputs[1].shape()[0];
        Ok(vec![
            when(&inputs[0], || batch_slice(g, 0, na))?,
            when(&inputs[1], || batch_slice(g, na, nb))?,
        ])
    }
}

/// Stacks `a` and `b` along the leading (batch) axis.
pub fn batch_concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() < 2 || a.rank() != b.rank() || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::shape("batch_concat", format!("{:?} with {:?}", a.shape(), b.shape())));
    }
    let mut shape = a.shape().to_vec();
    shape[0] += b.shape()[0];
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_op(shape, data, ConcatOp, vec![a.clone(), b.clone()]))
}

struct SliceOp {
    start: usize,
}
impl GradFn for SliceOp {
    fn name(&self) -> &'static str {
        "batch_slice"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(batch_pad(g, self.start, inputs[0].shape()[0])?)])
    }
}

/// Items `start..start + len` of the batch axis.
pub fn batch_slice(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let n = x.shape()[0];
    if len == 0 || start + len > n {
        return Err(Error::shape("batch_slice", format!("{start}..{} of {n}", start + len)));
    }
    let item = x.numel() / n;
    let data = x.data()[start * item..(start + len) * item].to_vec();
    let mut shape = x.shape().to_vec();
    shape[0] = len;
    Ok(Tensor::from_op(shape, data, SliceOp { start }, vec![x.clone()]))
}

struct PadOp {
    start: usize,
}
impl GradFn for PadOp {
    fn name(&self) -> &'static str {
        "batch_pad"
    }
    fn backward(&self, inputs: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(batch_slice(g, self.start, inputs[0].shape()[0])?)])
    }
}

/// Places `x` at batch offset `start` inside a zero batch of `total` items.
pub fn batch_pad(x: &Tensor, start: usize, total: usize) -> Result<Tensor> {
    let n = x.shape()[0];
    if start + n > total {
        return Err(Error::shape("batch_pad", format!("{n} items at {start} into {total}")));
    }
    let item = x.numel() / n;
    let mut data = vec![0.0; total * item];
    data[start * item..(start + n) * item].copy_from_slice(x.data());
    let mut shape = x.shape().to_vec();
    shape[0] = total;
    Ok(Tensor::from_op(shape, data, PadOp { start }, vec![x.clone()]))
}

/// A fixed linear resampling of `h x w` planes onto themselves: each output
/// pixel is a weighted sum of at most four input pixels. Used for every
/// geometric augmentation (bilinear taps with zero fill).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMap {
    pub h: usize,
    pub w: usize,
    taps: Vec<[(u32, f64); 4]>,
}

impl SampleMap {
    /// Bilinear sampling through an inverse affine map about the plane
    /// center: output pixel `(x, y)` (centered coordinates) reads the input at
    /// `m · (x, y, 1)`. Reads outside the plane contribute zero.
    pub fn affine(h: usize, w: usize, m: [[f64; 3]; 2]) -> Self {
        let cy = (h as f64 - 1.0) / 2.0;
        let cx = (w as f64 - 1.0) / 2.0;
        let mut taps = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                let (x, y) = (j as f64 - cx, i as f64 - cy);
                let sx = m[0][0] * x + m[0][1] * y + m[0][2] + cx;
                let sy = m[1][0] * x + m[1][1] * y + m[1][2] + cy;
                taps.push(bilinear_taps(h, w, sy, sx));
            }
        }
        SampleMap { h, w, taps }
    }

    pub fn identity(h: usize, w: usize) -> Self {
        Self::affine(h, w, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    }

    fn apply(&self, src: &[f64], dst: &mut [f64]) {
        for (d, taps) in dst.iter_mut().zip(&self.taps) {
            *d = taps.iter().map(|&(k, wt)| wt * src[k as usize]).sum();
        }
    }

    fn apply_adjoint(&self, src: &[f64], dst: &mut [f64]) {
        for (s, taps) in src.iter().zip(&self.taps) {
            for &(k, wt) in taps {
                dst[k as usize] += wt * s;
            }
        }
    }
}

fn bilinear_taps(h: usize, w: usize, sy: f64, sx: f64) -> [(u32, f64); 4] {
    let mut taps = [(0u32, 0.0); 4];
    let (y0, x0) = (sy.floor(), sx.floor());
    let (fy, fx) = (sy - y0, sx - x0);
    let corners = [
        (y0, x0, (1.0 - fy) * (1.0 - fx)),
        (y0, x0 + 1.0, (1.0 - fy) * fx),
        (y0 + 1.0, x0, fy * (1.0 - fx)),
        (y0 + 1.0, x0 + 1.0, fy * fx),
    ];
    for (tap, (yy, xx, wt)) in taps.iter_mut().zip(corners) {
        if wt != 0.0 && yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
            *tap = ((yy as usize * w + xx as usize) as u32, wt);
        }
    }
    taps
}

struct ResampleOp {
    map: Rc<SampleMap>,
    adjoint: bool,
}
impl GradFn for ResampleOp {
    fn name(&self) -> &'static str {
        if self.adjoint {
            "resample_adjoint"
        } else {
            "resample"
        }
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        Ok(vec![Some(resample_impl(g, &self.map, !self.adjoint)?)])
    }
}

fn resample_impl(x: &Tensor, map: &Rc<SampleMap>, adjoint: bool) -> Result<Tensor> {
    expect_rank("resample", x, 4)?;
    let (_, _, h, w) = dims4(x);
    if (h, w) != (map.h, map.w) {
        return Err(Error::shape("resample", format!("{h}x{w} planes, map is {}x{}", map.h, map.w)));
    }
    let mut out = vec![0.0; x.numel()];
    for (src, dst) in x.data().chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        if adjoint {
            map.apply_adjoint(src, dst);
        } else {
            map.apply(src, dst);
        }
    }
    let op = ResampleOp {
        map: map.clone(),
        adjoint,
    };
    Ok(Tensor::from_op(x.shape().to_vec(), out, op, vec![x.clone()]))
}

/// Applies `map` to every plane of `[N, C, H, W]`.
pub fn resample(x: &Tensor, map: &Rc<SampleMap>) -> Result<Tensor> {
    resample_impl(x, map, false)
}

/// Transpose of [`resample`].
pub fn resample_adjoint(x: &Tensor, map: &Rc<SampleMap>) -> Result<Tensor> {
    resample_impl(x, map, true)
}

/// Which values [`image_blend`] averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendScope {
    /// Per pixel, across channels (saturation).
    Channels,
    /// Per image, across channels and pixels (contrast).
    Image,
}

struct BlendOp {
    alpha: f64,
    beta: f64,
    scope: BlendScope,
}
impl GradFn for BlendOp {
    fn name(&self) -> &'static str {
        "image_blend"
    }
    fn backward(&self, _: &[Tensor], _: &Tensor, g: &Tensor) -> Grads {
        // Averaging is an orthogonal projection, so the map is symmetric.
        Ok(vec![Some(image_blend(g, self.alpha, self.beta, self.scope)?)])
    }
}

/// `alpha * x + beta * mean(x)`, the mean taken per `scope` and broadcast back.
pub fn image_blend(x: &Tensor, alpha: f64, beta: f64, scope: BlendScope) -> Result<Tensor> {
    expect_rank("image_blend", x, 4)?;
    let (_, c, h, w) = dims4(x);
    let plane = h * w;
    let mut out = vec![0.0; x.numel()];
    for (src, dst) in x.data().chunks_exact(c * plane).zip(out.chunks_exact_mut(c * plane)) {
        match scope {
            BlendScope::Image => {
                let m = src.iter().sum::<f64>() / src.len() as f64;
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = alpha * s + beta * m;
                }
            }
            BlendScope::Channels => {
                for p in 0..plane {
                    let m = (0..c).map(|ch| src[ch * plane + p]).sum::<f64>() / c as f64;
                    for ch in 0..c {
                        dst[ch * plane + p] = alpha * src[ch * plane + p] + beta * m;
                    }
                }
            }
        }
    }
    let op = BlendOp { alpha, beta, scope };
    Ok(Tensor::from_op(x.shape().to_vec(), out, op, vec![x.clone()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn p(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::param(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_counts_overlapping_ones() {
        let x = t(&[1, 1, 3, 3], &[1.0; 9]);
        let w = t(&[1, 1, 3, 3], &[1.0; 9]);
        let b = t(&[1], &[0.0]);
        let y = conv2d(&x, &w, &b, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data()[4], 9.0);
        for corner in [0, 2, 6, 8] {
            assert_eq!(y.data()[corner], 4.0);
        }
        assert_eq!(y.data()[1], 6.0);
    }

    #[test]
    fn conv_with_zero_weights_is_zero() {
        let x = t(&[2, 2, 4, 4], &(0..64).map(|i| i as f64).collect::<Vec<_>>());
        let w = Tensor::zeros(&[3, 2, 3, 3]).unwrap();
        let b = Tensor::zeros(&[3]).unwrap();
        let y = conv2d(&x, &w, &b, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 2, 4, 4]).unwrap();
        let w = Tensor::zeros(&[3, 1, 3, 3]).unwrap();
        assert!(matches!(conv2d_nobias(&x, &w, 1), Err(Error::Shape { op: "conv2d", .. })));
    }

    #[test]
    fn relu_values_and_zero_subgradient() {
        let x = p(&[3], &[-1.0, 0.0, 2.0]);
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        sum(&y).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(relu(&y).data(), y.data());
    }

    #[test]
    fn avg_pool_of_two_by_two() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(avg_pool2(&x).unwrap().data(), &[2.5]);
        let odd = Tensor::zeros(&[1, 1, 3, 4]).unwrap();
        assert!(avg_pool2(&odd).is_err());
    }

    #[test]
    fn dense_identity_and_bias_rows() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let zero_b = t(&[2], &[0.0, 0.0]);
        assert_eq!(dense(&x, &eye, &zero_b).unwrap().data(), x.data());
        let zx = Tensor::zeros(&[3, 2]).unwrap();
        let b = t(&[2], &[5.0, -1.0]);
        assert_eq!(dense(&zx, &eye, &b).unwrap().data(), &[5.0, -1.0, 5.0, -1.0, 5.0, -1.0]);
        let bad = Tensor::zeros(&[3, 2]).unwrap();
        assert!(dense(&x, &bad, &b).is_err());
    }

    #[test]
    fn hflip_reverses_width_and_is_involution() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let f = hflip(&x).unwrap();
        assert_eq!(f.data(), &[2.0, 1.0, 4.0, 3.0]);
        assert_eq!(hflip(&f).unwrap().data(), x.data());
        assert!(hflip(&t(&[2, 2], &[0.0; 4])).is_err());
    }

    #[test]
    fn concat_routes_gradient_slices() {
        let a = p(&[1, 1, 1, 2], &[1.0, 2.0]);
        let b = p(&[2, 1, 1, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = batch_concat(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 1, 1, 2]);
        let weights = Rc::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        sum(&mul_const(&c, &weights).unwrap()).backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0]);
        assert_eq!(b.grad().unwrap(), vec![3.0, 4.0, 5.0, 6.0]);
        let wrong = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
        assert!(batch_concat(&a, &wrong).is_err());
    }

    #[test]
    fn backward_sum_and_square() {
        let x = p(&[4], &[1.0, -2.0, 3.0, 0.5]);
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
        x.zero_grad();
        scale(&sum(&mul(&x, &x).unwrap()), 0.5).backward().unwrap();
        assert_eq!(x.grad().unwrap(), x.to_vec());
    }

    #[test]
    fn backward_accumulates_across_calls() {
        let x = p(&[2], &[1.0, 2.0]);
        let y = sum(&scale(&x, 3.0));
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = p(&[2], &[1.0, 2.0]);
        assert!(matches!(scale(&x, 2.0).backward(), Err(Error::NonScalarRoot(_))));
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        // y = sum(x*x + 3x) shares x across two branches; dy/dx = 2x + 3.
        let x = p(&[3], &[1.0, -1.0, 2.0]);
        let y = sum(&add(&mul(&x, &x).unwrap(), &scale(&x, 3.0)).unwrap());
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![5.0, 1.0, 7.0]);
    }

    #[test]
    fn constants_do_not_record() {
        let x = t(&[2], &[1.0, 2.0]);
        let y = sum(&mul(&x, &x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }

    #[test]
    fn second_order_through_grad() {
        // f = sum(x^3); df/dx = 3x^2; d/dx sum(df/dx) = 6x
        let x = p(&[3], &[1.0, 2.0, -1.0]);
        let f = sum(&mul(&x, &mul(&x, &x).unwrap()).unwrap());
        let g = grad(&f, std::slice::from_ref(&x), true).unwrap().remove(0);
        assert_eq!(g.data(), &[3.0, 12.0, 3.0]);
        let gg = grad(&sum(&g), std::slice::from_ref(&x), false).unwrap().remove(0);
        assert_eq!(gg.data(), &[6.0, 12.0, -6.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0]);
        let s = softmax(&x).unwrap();
        for row in s.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ls = log_softmax(&x).unwrap();
        assert!(ls.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sample_map_identity_is_exact() {
        let map = Rc::new(SampleMap::identity(3, 4));
        let x = t(&[1, 1, 3, 4], &(0..12).map(|i| i as f64 * 0.3).collect::<Vec<_>>());
        assert_eq!(resample(&x, &map).unwrap().data(), x.data());
    }

    #[test]
    fn blend_is_self_adjoint() {
        let x = t(&[2, 3, 2, 2], &(0..24).map(|i| (i as f64).sin()).collect::<Vec<_>>());
        let y = t(&[2, 3, 2, 2], &(0..24).map(|i| (i as f64 * 0.7).cos()).collect::<Vec<_>>());
        for scope in [BlendScope::Channels, BlendScope::Image] {
            let bx = image_blend(&x, 0.7, 0.3, scope).unwrap();
            let by = image_blend(&y, 0.7, 0.3, scope).unwrap();
            let l: f64 = bx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let r: f64 = x.data().iter().zip(by.data()).map(|(a, b)| a * b).sum();
            assert!((l - r).abs() < 1e-12);
        }
    }
}
