//! Retraining and evaluation of distilled sets, baselines and run manifests.

mod manifest;

pub use manifest::{git_blob_hash, Manifest, OutputRecord};

use crate::augment::{apply_aug, sample_aug, AugOp};
use crate::config::{Config, RetrainConfig};
use crate::convnet::{cross_entropy, Architecture, NetworkParams};
use crate::csv::Csv;
use crate::data::{load_dataset, make_flip_closed, Dataset, ImageBatch, RealSet, SyntheticSet};
use crate::error::{Error, Result};
use crate::objectives::streams;
use crate::par;
use crate::rng::Rng;
use crate::tensor::{grad, no_grad};

const EVAL_CHUNK: usize = 500;

/// Trains a fresh network on `train` with SGD (momentum, weight decay and a
/// single step-down of the learning rate) and per-batch augmentation drawn
/// from `palette`.
pub fn train_network(
    arch: Architecture,
    train: &ImageBatch,
    rc: &RetrainConfig,
    drop_epoch: usize,
    palette: &[AugOp],
    rng: &Rng,
) -> Result<NetworkParams> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty set".into()));
    }
    let mut params = NetworkParams::init(arch, &mut rng.fork(0))?;
    let mut velocity: Vec<Vec<f64>> = params.buffers().iter().map(|b| vec![0.0; b.len()]).collect();
    let mut order_rng = rng.fork(1);
    let aug_rng = rng.fork(2);
    let batch = rc.batch_size.min(train.len());
    let mut step = 0u64;
    for epoch in 0..rc.epochs {
        let lr = if epoch >= drop_epoch { rc.lr * rc.lr_drop_factor } else { rc.lr };
        let order = order_rng.choose_indices(train.len(), train.len());
        for idx in order.chunks(batch) {
            let mut x = train.gather(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            if !palette.is_empty() {
                let spec = sample_aug(&mut aug_rng.fork(step), palette, train.channels, train.height, train.width)?;
                x = apply_aug(&spec, &x)?;
            }
            let net = params.bind(true)?;
            let loss = cross_entropy(&net.logits(&x)?, &labels)?;
            let value = loss.item()?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}"),
                    value,
                });
            }
            let grads = grad(&loss, &net.parameters(), false)?;
            for ((p, v), g) in params.buffers_mut().into_iter().zip(&mut velocity).zip(&grads) {
                for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                    let g = g + rc.weight_decay * *p;
                    *v = rc.momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            step += 1;
        }
    }
    Ok(params)
}

/// Predicted class of every image.
pub fn predict(params: &NetworkParams, set: &ImageBatch) -> Result<Vec<usize>> {
    no_grad(|| {
        let net = params.bind(false)?;
        let mut out = Vec::with_capacity(set.len());
        let all: Vec<usize> = (0..set.len()).collect();
        for idx in all.chunks(EVAL_CHUNK) {
            let logits = net.logits(&set.gather(idx)?)?;
            let k = logits.shape()[1];
            for row in logits.data().chunks_exact(k) {
                let best = (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                out.push(best);
            }
        }
        Ok(out)
    })
}

/// Fraction of `set` classified correctly.
pub fn accuracy(params: &NetworkParams, set: &ImageBatch) -> Result<f64> {
    let pred = predict(params, set)?;
    let hits = pred.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / set.len().max(1) as f64)
}

/// Accuracies over several evaluation seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

impl EvalSummary {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }

    /// Sample standard deviation (0 for a single seed).
    pub fn std(&self) -> f64 {
        let n = self.accuracies.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["seed_index", "seed", "accuracy"]);
        for (i, (s, a)) in self.seeds.iter().zip(&self.accuracies).enumerate() {
            csv.row(&[&i, s, a]);
        }
        csv
    }
}

/// Seeds of the evaluation runs, derived from the master seed.
pub fn eval_seeds(cfg: &Config, count: usize) -> Vec<u64> {
    let base = Rng::new(cfg.seed).fork(streams::EVAL);
    (0..count).map(|i| base.fork(i as u64).seed()).collect()
}

/// Trains one network per seed on `train` (no flip concatenation, the
/// retraining palette) and reports test accuracy.
pub fn retrain_eval(cfg: &Config, train: &ImageBatch, test: &ImageBatch, seeds: &[u64]) -> Result<EvalSummary> {
    let arch = cfg.retrain_architecture(train.channels, train.height, train.width, train.classes)?;
    let palette = cfg.retrain_palette()?;
    let drop = cfg.lr_drop_epoch();
    let accuracies = par::try_map_indexed(seeds.len(), |i| {
        let params = train_network(arch, train, &cfg.retrain, drop, &palette, &Rng::new(seeds[i]))?;
        accuracy(&params, test)
    })?;
    Ok(EvalSummary {
        seeds: seeds.to_vec(),
        accuracies,
    })
}

/// Evaluates a distilled set.
pub fn evaluate_synthetic(cfg: &Config, syn: &SyntheticSet, test: &ImageBatch, seeds: &[u64]) -> Result<EvalSummary> {
    retrain_eval(cfg, &syn.to_batch(), test, seeds)
}

/// Same protocol on `ipc` random real images per class, a fresh draw per
/// seed.
pub fn baseline_random_real(cfg: &Config, real: &RealSet, ipc: usize, test: &ImageBatch, seeds: &[u64]) -> Result<EvalSummary> {
    let b = &real.images;
    let arch = cfg.retrain_architecture(b.channels, b.height, b.width, real.classes())?;
    let palette = cfg.retrain_palette()?;
    let drop = cfg.lr_drop_epoch();
    let accuracies = par::try_map_indexed(seeds.len(), |i| {
        let rng = Rng::new(seeds[i]);
        let subset = SyntheticSet::from_real(real, ipc, &mut rng.fork(99))?.to_batch();
        let params = train_network(arch, &subset, &cfg.retrain, drop, &palette, &rng)?;
        accuracy(&params, test)
    })?;
    Ok(EvalSummary {
        seeds: seeds.to_vec(),
        accuracies,
    })
}

/// Loads the dataset named in `cfg` and applies its subset, flip-closure
/// and test-limit settings.
pub fn load_configured(cfg: &Config) -> Result<Dataset> {
    let mut ds = load_dataset(&cfg.data.name, &cfg.data.dir)?;
    if let Some(n) = cfg.data.train_per_class {
        ds.train = ds.train.take_per_class(n);
    }
    if cfg.data.flip_closed {
        ds.train = make_flip_closed(&ds.train);
    }
    ds.test = limit_test(&ds.test, cfg.data.test_limit);
    ds.meta.train_count = ds.train.images.len();
    ds.meta.test_count = ds.test.len();
    Ok(ds)
}

/// The first `limit` test images, or all of them.
pub fn limit_test(test: &ImageBatch, limit: Option<usize>) -> ImageBatch {
    match limit {
        Some(n) if n < test.len() => test.subset(&(0..n).collect::<Vec<_>>()),
        _ => test.clone(),
    }
}

/// Per-iteration losses of a distillation run as CSV.
pub fn loss_csv(log: &[crate::objectives::IterationLog]) -> Csv {
    let mut csv = Csv::new(&["iteration", "loss"]);
    for l in log {
        csv.row(&[&l.iteration, &l.loss]);
    }
    csv
}
