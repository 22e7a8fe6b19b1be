//! Matching objectives and the distillation loop.

use std::rc::Rc;

use crate::augment::{apply_aug, sample_aug, AugOp, AugSpec};
use crate::config::{Config, InitMode, Method};
use crate::convnet::{cross_entropy, Architecture, BoundNet, NetworkParams};
use crate::data::{RealSet, SyntheticSet};
use crate::diagnostics::{synthetic_score, ScoreMetric};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;
use crate::tensor::{enable_grad, grad, ops, Tensor};

/// `||mean f(real) - mean f(syn)||^2` over the flattened features of `net`.
pub fn dm_distance(net: &BoundNet, real: &Tensor, syn: &Tensor) -> Result<Tensor> {
    let mr = ops::mean_rows(&net.features(real)?)?;
    let ms = ops::mean_rows(&net.features(syn)?)?;
    let d = ops::sub(&mr, &ms)?;
    Ok(ops::sum(&ops::mul(&d, &d)?))
}

/// Weight-gradient groups of `net` as `[rows, cols]` matrices, one row per
/// output unit. Biases and normalization parameters are not included.
fn weight_rows(net: &BoundNet, grads: &[Tensor]) -> Result<Vec<Tensor>> {
    let conv = net.conv_weights().len();
    let mut out = Vec::with_capacity(conv + 1);
    for g in &grads[..conv] {
        let rows = g.shape()[0];
        out.push(ops::reshape(g, &[rows, g.numel() / rows])?);
    }
    // The head is stored [features, classes]; rows are classes.
    out.push(ops::transpose(&grads[conv])?);
    Ok(out)
}

fn matched_tensors(net: &BoundNet) -> Vec<Tensor> {
    let mut w = net.conv_weights();
    w.push(net.head_w.clone());
    w
}

/// Sum over output rows of `1 - cos(a_row, b_row)`. Rows where either side
/// has zero norm contribute 0.
fn row_cosine_distance(a: &Tensor, b: &Tensor) -> Result<(Tensor, usize)> {
    let dot = ops::row_sum(&ops::mul(a, b)?)?;
    let na = ops::row_sum(&ops::mul(a, a)?)?;
    let nb = ops::row_sum(&ops::mul(b, b)?)?;
    let mask: Vec<f64> = na
        .data()
        .iter()
        .zip(nb.data())
        .map(|(&x, &y)| if x > 0.0 && y > 0.0 { 1.0 } else { 0.0 })
        .collect();
    let degenerate = mask.iter().filter(|&&m| m == 0.0).count();
    let fill: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
    let denom = ops::add_const(&ops::mul(&na, &nb)?, &fill)?;
    let cos = ops::mul(&dot, &ops::rsqrt(&denom))?;
    let one_minus = ops::add_scalar(&ops::scale(&cos, -1.0), 1.0);
    Ok((ops::sum(&ops::mul_const(&one_minus, &Rc::new(mask))?), degenerate))
}

/// Gradient-matching distance between the cross-entropy gradients that
/// `real` and `syn` (all labelled `class`) induce on the weights of `net`.
///
/// `net` must be bound as trainable. The result is differentiable with
/// respect to `syn`.
pub fn dc_distance(net: &BoundNet, real: &Tensor, syn: &Tensor, class: usize) -> Result<Tensor> {
    let g_r = weight_gradients(net, real, &vec![class; real.shape()[0]], false)?;
    let g_s = weight_gradients(net, syn, &vec![class; syn.shape()[0]], true)?;
    gradient_match(&g_r, &g_s)
}

/// Cross-entropy gradients of the matched weights as `[rows, cols]` groups.
pub(crate) fn weight_gradients(net: &BoundNet, x: &Tensor, labels: &[usize], create_graph: bool) -> Result<Vec<Tensor>> {
    // The inner gradients exist only if the forward pass is recorded.
    let grads = enable_grad(|| {
        let loss = cross_entropy(&net.logits(x)?, labels)?;
        grad(&loss, &matched_tensors(net), create_graph)
    })?;
    weight_rows(net, &grads)
}

/// Sum of [`row_cosine_distance`] over matching groups.
pub(crate) fn gradient_match(a: &[Tensor], b: &[Tensor]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    let mut degenerate = 0;
    for (x, y) in a.iter().zip(b) {
        let (d, n) = row_cosine_distance(x, y)?;
        degenerate += n;
        total = Some(match total {
            None => d,
            Some(t) => ops::add(&t, &d)?,
        });
    }
    if degenerate > 0 {
        log::warn!("gradient match: {degenerate} zero-norm gradient rows counted as 0");
    }
    total.ok_or_else(|| Error::InvalidArgument("no weight groups to match".into()))
}

/// `S` followed by its horizontal mirror images.
pub fn fyi_augment(syn: &Tensor) -> Result<Tensor> {
    ops::batch_concat(syn, &ops::hflip(syn)?)
}

/// One class's contribution to an iteration: the loss and its gradient with
/// respect to the stored synthetic pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStep {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Inputs shared by the per-class steps of one iteration.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub method: Method,
    pub fyi: bool,
    pub params: &'a NetworkParams,
    pub aug: Option<&'a AugSpec>,
}

/// Loss of class `class` and its gradient with respect to `syn_pixels`
/// (shape `[ipc, C, H, W]`). `real` is the sampled real minibatch.
pub fn class_loss_grad(ctx: &StepContext, real: &Tensor, syn_pixels: &Tensor, class: usize) -> Result<ClassStep> {
    let s = Tensor::param(syn_pixels.shape(), syn_pixels.to_vec())?;
    let mut a = if ctx.fyi { fyi_augment(&s)? } else { s.clone() };
    let mut r = real.clone();
    if let Some(spec) = ctx.aug {
        a = apply_aug(spec, &a)?;
        r = apply_aug(spec, &r)?;
    }
    let loss = match ctx.method {
        Method::Dm => dm_distance(&ctx.params.bind(false)?, &r, &a)?,
        Method::Dc => dc_distance(&ctx.params.bind(true)?, &r, &a, class)?,
    };
    let value = loss.item()?;
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: format!("matching loss of class {class}"),
            value,
        });
    }
    let g = grad(&loss, std::slice::from_ref(&s), false)?.remove(0);
    Ok(ClassStep {
        loss: value,
        grad: g.to_vec(),
    })
}

/// Heavy-ball SGD on one class: `v = momentum * v + g`, `x -= lr * v`.
pub fn apply_update(pixels: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((x, v), g) in pixels.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *x -= lr * *v;
    }
}

/// One update of class `class`: computes the loss, then moves
/// `syn.class_pixels(class)` along the negative gradient. Returns the loss
/// before the update.
pub fn distill_step(
    ctx: &StepContext,
    real: &Tensor,
    syn: &mut SyntheticSet,
    velocity: &mut [f64],
    class: usize,
    lr: f64,
    momentum: f64,
) -> Result<f64> {
    let step = class_loss_grad(ctx, real, &syn.class_tensor(class), class)?;
    apply_update(syn.class_pixels_mut(class), velocity, &step.grad, lr, momentum);
    Ok(step.loss)
}

/// Per-iteration record of a distillation run.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Sum of the per-class losses.
    pub loss: f64,
    pub class_losses: Vec<f64>,
}

/// A traced unequalness score of the stored set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub syn: SyntheticSet,
    pub log: Vec<IterationLog>,
    pub trace: Vec<TracePoint>,
}

impl DistillOutcome {
    /// Mean total loss over the last `window` iterations.
    pub fn final_loss(&self, window: usize) -> f64 {
        let n = window.clamp(1, self.log.len().max(1));
        let tail = &self.log[self.log.len().saturating_sub(n)..];
        tail.iter().map(|l| l.loss).sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Named random streams derived from the master seed.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const THETA: u64 = 2;
    pub const REAL_BATCH: u64 = 3;
    pub const AUGMENT: u64 = 4;
    pub const TRACE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const SCORE: u64 = 7;
}

/// Distils `real` into `cfg.distill.ipc` images per class.
///
/// Every iteration draws a fresh random network and, for each class in
/// order, a fresh real minibatch; with a non-empty palette one augmentation
/// is drawn per class and applied to both sides. The per-class gradients are
/// computed in parallel and applied in class order, so results do not
/// depend on the thread count.
pub fn distill(cfg: &Config, real: &RealSet) -> Result<DistillOutcome> {
    let d = &cfg.distill;
    let b = &real.images;
    let arch = cfg.architecture(b.channels, b.height, b.width, real.classes())?;
    let palette = cfg.distill_palette()?;
    let master = Rng::new(cfg.seed);
    let mut syn = match d.init {
        InitMode::Real => SyntheticSet::from_real(real, d.ipc, &mut master.fork(streams::INIT))?,
        InitMode::Gaussian => SyntheticSet::gaussian(real, d.ipc, &mut master.fork(streams::INIT)),
    };
    distill_from(cfg, arch, &palette, real, &mut syn, &master)
}

fn distill_from(
    cfg: &Config,
    arch: Architecture,
    palette: &[AugOp],
    real: &RealSet,
    syn: &mut SyntheticSet,
    master: &Rng,
) -> Result<DistillOutcome> {
    let d = &cfg.distill;
    let classes = real.classes();
    let (theta_rng, batch_rng, aug_rng) = (
        master.fork(streams::THETA),
        master.fork(streams::REAL_BATCH),
        master.fork(streams::AUGMENT),
    );
    let trace_rng = master.fork(streams::TRACE);
    let mut velocity = vec![vec![0.0; syn.class_len()]; classes];
    let mut log = Vec::with_capacity(d.iterations);
    let mut trace = Vec::new();
    let mut record_trace = |it: usize, syn: &SyntheticSet| -> Result<()> {
        if d.trace_every > 0 && it.is_multiple_of(d.trace_every) {
            let score = synthetic_score(&arch, syn, ScoreMetric::from(d.method), d.trace_thetas, &trace_rng)?;
            trace.push(TracePoint { iteration: it, score });
        }
        Ok(())
    };
    for it in 0..d.iterations {
        record_trace(it, syn)?;
        let params = NetworkParams::init(arch, &mut theta_rng.fork(it as u64))?;
        let (h, w, c) = (syn.height, syn.width, syn.channels);
        let snapshot: &SyntheticSet = syn;
        let steps = par::try_map_indexed(classes, |class| {
            let tag = (it * classes + class) as u64;
            let real_c = real.sample_class(class, d.real_batch, &mut batch_rng.fork(tag))?;
            let aug = if palette.is_empty() {
                None
            } else {
                Some(sample_aug(&mut aug_rng.fork(tag), palette, c, h, w)?)
            };
            let ctx = StepContext {
                method: d.method,
                fyi: d.fyi,
                params: &params,
                aug: aug.as_ref(),
            };
            class_loss_grad(&ctx, &real_c, &snapshot.class_tensor(class), class)
        })?;
        let mut class_losses = Vec::with_capacity(classes);
        for (class, step) in steps.into_iter().enumerate() {
            apply_update(syn.class_pixels_mut(class), &mut velocity[class], &step.grad, d.syn_lr, d.syn_momentum);
            class_losses.push(step.loss);
        }
        let loss = class_losses.iter().sum();
        log::debug!("iteration {it}: loss {loss:.6}");
        log.push(IterationLog {
            iteration: it,
            loss,
            class_losses,
        });
    }
    record_trace(d.iterations, syn)?;
    Ok(DistillOutcome {
        syn: syn.clone(),
        log,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convnet::Architecture;

    fn arch() -> Architecture {
        let mut a = Architecture::for_input(1, 8, 8, 3);
        a.net_width = 4;
        a.blocks = 2;
        a
    }

    fn images(n: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::new(&[n, 1, 8, 8], (0..n * 64).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn dm_is_symmetric_and_zero_on_identical_inputs() {
        let p = NetworkParams::init(arch(), &mut Rng::new(0)).unwrap();
        let net = p.bind(false).unwrap();
        let (a, b) = (images(3, 1), images(2, 2));
        let ab = dm_distance(&net, &a, &b).unwrap().item().unwrap();
        let ba = dm_distance(&net, &b, &a).unwrap().item().unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
        assert_eq!(dm_distance(&net, &a, &a).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn dc_is_zero_on_identical_inputs() {
        let p = NetworkParams::init(arch(), &mut Rng::new(3)).unwrap();
        let net = p.bind(true).unwrap();
        let a = images(3, 4);
        let d = dc_distance(&net, &a, &a, 1).unwrap().item().unwrap();
        assert!(d.abs() < 1e-12, "{d}");
        let other = dc_distance(&net, &a, &images(2, 5), 1).unwrap().item().unwrap();
        assert!(other > 0.0);
    }

    #[test]
    fn zero_rows_count_as_zero() {
        let a = Tensor::new(&[2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let (d, n) = row_cosine_distance(&a, &b).unwrap();
        assert_eq!(n, 1);
        assert!((d.item().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fyi_doubles_the_batch() {
        let s = images(2, 6);
        let a = fyi_augment(&s).unwrap();
        assert_eq!(a.shape(), &[4, 1, 8, 8]);
        assert_eq!(&a.data()[..128], s.data());
        assert_eq!(&a.data()[128..], ops::hflip(&s).unwrap().data());
    }

    #[test]
    fn zero_learning_rate_leaves_pixels_unchanged() {
        let mut x = vec![1.0, -2.0];
        let mut v = vec![0.0; 2];
        apply_update(&mut x, &mut v, &[3.0, 4.0], 0.0, 0.5);
        assert_eq!(x, vec![1.0, -2.0]);
        apply_update(&mut x, &mut v, &[1.0, 0.0], 0.5, 0.5);
        // v = 0.5 * [3, 4] + [1, 0] = [2.5, 2]
        assert_eq!(x, vec![1.0 - 1.25, -2.0 - 1.0]);
    }
}
