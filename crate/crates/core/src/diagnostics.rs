//! Measurements of how mirror-symmetric a set of images, or a network's view
//! of it, is.

use crate::config::Method;
use crate::convnet::{Architecture, NetworkParams};
use crate::csv::Csv;
use crate::data::{ImageBatch, SyntheticSet};
use crate::error::{Error, Result};
use crate::objectives::{gradient_match, weight_gradients, TracePoint};
use crate::par;
use crate::rng::Rng;
use crate::tensor::ops::hflip_raw;
use crate::tensor::{no_grad, ops, Tensor};

/// Images pushed through a network at once by the diagnostics.
const CHUNK: usize = 250;

/// Distance used to compare a set with its mirror image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMetric {
    Dm,
    Dc,
}

impl From<Method> for ScoreMetric {
    fn from(m: Method) -> Self {
        match m {
            Method::Dm => ScoreMetric::Dm,
            Method::Dc => ScoreMetric::Dc,
        }
    }
}

fn mirrored(batch: &ImageBatch) -> ImageBatch {
    ImageBatch {
        data: hflip_raw(&batch.data, batch.width),
        labels: batch.labels.clone(),
        ..*batch
    }
}

fn chunks(batch: &ImageBatch) -> impl Iterator<Item = (Tensor, &[usize])> + '_ {
    let n = batch.image_len();
    batch
        .data
        .chunks(CHUNK * n)
        .zip(batch.labels.chunks(CHUNK))
        .map(move |(d, l)| {
            let t = Tensor::new(&[l.len(), batch.channels, batch.height, batch.width], d.to_vec())
                .expect("chunk matches its shape");
            (t, l)
        })
}

/// Mean flattened feature vector of `batch`.
fn mean_features(params: &NetworkParams, batch: &ImageBatch) -> Result<Vec<f64>> {
    no_grad(|| {
        let net = params.bind(false)?;
        let mut acc = vec![0.0; params.arch.feature_dim()];
        for (x, _) in chunks(batch) {
            let s = ops::sum_rows(&net.features(&x)?)?;
            acc.iter_mut().zip(s.data()).for_each(|(a, v)| *a += v);
        }
        let n = batch.len() as f64;
        Ok(acc.into_iter().map(|v| v / n).collect())
    })
}

/// Mean cross-entropy weight gradients of `batch`, grouped by output row.
fn mean_weight_gradients(params: &NetworkParams, batch: &ImageBatch) -> Result<Vec<Tensor>> {
    let net = params.bind(true)?;
    let total = batch.len() as f64;
    let mut acc: Option<Vec<(Vec<usize>, Vec<f64>)>> = None;
    for (x, labels) in chunks(batch) {
        let g = weight_gradients(&net, &x, labels, false)?;
        let w = labels.len() as f64 / total;
        match &mut acc {
            None => {
                acc = Some(
                    g.iter()
                        .map(|t| (t.shape().to_vec(), t.data().iter().map(|v| v * w).collect()))
                        .collect(),
                )
            }
            Some(a) => {
                for ((_, dst), t) in a.iter_mut().zip(&g) {
                    dst.iter_mut().zip(t.data()).for_each(|(d, v)| *d += v * w);
                }
            }
        }
    }
    acc.expect("batch is non-empty")
        .into_iter()
        .map(|(shape, data)| Tensor::new(&shape, data))
        .collect()
}

/// Distance between `set` and its mirror image as seen by the network
/// `params`: `D(R, flip R)`. Zero exactly when the set is closed under
/// flipping (up to order).
pub fn unequalness_score(params: &NetworkParams, set: &ImageBatch, metric: ScoreMetric) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("score of an empty set".into()));
    }
    let flipped = mirrored(set);
    match metric {
        ScoreMetric::Dm => {
            let (a, b) = (mean_features(params, set)?, mean_features(params, &flipped)?);
            Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
        }
        ScoreMetric::Dc => {
            let (a, b) = (mean_weight_gradients(params, set)?, mean_weight_gradients(params, &flipped)?);
            no_grad(|| gradient_match(&a, &b)?.item())
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scores of `set` under `thetas` random networks, the `i`-th drawn from
/// `rng.fork(i)`.
pub fn score_samples(arch: &Architecture, set: &ImageBatch, metric: ScoreMetric, thetas: usize, rng: &Rng) -> Result<Vec<f64>> {
    par::try_map_indexed(thetas, |i| {
        let params = NetworkParams::init(*arch, &mut rng.fork(i as u64))?;
        unequalness_score(&params, set, metric)
    })
}

/// Median score over `thetas` random networks.
pub fn median_score(arch: &Architecture, set: &ImageBatch, metric: ScoreMetric, thetas: usize, rng: &Rng) -> Result<f64> {
    Ok(median(&score_samples(arch, set, metric, thetas, rng)?))
}

/// Score of a distilled set: per network, the mean over classes of the score
/// of `S_c`; then the median over networks.
pub fn synthetic_score(arch: &Architecture, syn: &SyntheticSet, metric: ScoreMetric, thetas: usize, rng: &Rng) -> Result<f64> {
    let batch = syn.to_batch();
    let per_class: Vec<ImageBatch> = (0..syn.classes)
        .map(|c| batch.subset(&(c * syn.ipc..(c + 1) * syn.ipc).collect::<Vec<_>>()))
        .collect();
    let samples = par::try_map_indexed(thetas, |i| {
        let params = NetworkParams::init(*arch, &mut rng.fork(i as u64))?;
        let mut total = 0.0;
        for s in &per_class {
            total += unequalness_score(&params, s, metric)?;
        }
        Ok::<_, Error>(total / syn.classes as f64)
    })?;
    Ok(median(&samples))
}

/// Median score of nested random subsets of `set` of each size in `sizes`.
/// The same networks are used for every size.
pub fn score_series(
    arch: &Architecture,
    set: &ImageBatch,
    sizes: &[usize],
    metric: ScoreMetric,
    thetas: usize,
    rng: &Rng,
) -> Result<Vec<f64>> {
    let order = rng.fork(0).choose_indices(set.len(), set.len());
    let theta_rng = rng.fork(1);
    sizes
        .iter()
        .map(|&n| {
            if n == 0 || n > set.len() {
                return Err(Error::InvalidArgument(format!("subset size {n} outside [1, {}]", set.len())));
            }
            median_score(arch, &set.subset(&order[..n]), metric, thetas, &theta_rng)
        })
        .collect()
}

/// Trace of scores recorded during distillation as `iteration,score`.
pub fn score_trace_csv(trace: &[TracePoint]) -> Csv {
    let mut csv = Csv::new(&["iteration", "score"]);
    for p in trace {
        csv.row(&[&p.iteration, &p.score]);
    }
    csv
}

/// Mean over images of `||f(x) - f(flip x)||`.
pub fn flip_feature_distance(params: &NetworkParams, set: &ImageBatch) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("feature distance of an empty set".into()));
    }
    let flipped = mirrored(set);
    no_grad(|| {
        let net = params.bind(false)?;
        let mut total = 0.0;
        for ((a, _), (b, _)) in chunks(set).zip(chunks(&flipped)) {
            let (fa, fb) = (net.features(&a)?, net.features(&b)?);
            let d = fa.shape()[1];
            for (ra, rb) in fa.data().chunks_exact(d).zip(fb.data().chunks_exact(d)) {
                total += ra.iter().zip(rb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            }
        }
        Ok(total / set.len() as f64)
    })
}

/// Mean absolute difference between each image and its mirror.
pub fn pixel_symmetry(set: &ImageBatch) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let flipped = hflip_raw(&set.data, set.width);
    set.data.iter().zip(&flipped).map(|(a, b)| (a - b).abs()).sum::<f64>() / set.data.len() as f64
}

/// Where class activation maps concentrate, accumulated over images.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHistogram {
    pub height: usize,
    pub width: usize,
    /// Row-major counts of positions above each image's 90th percentile.
    pub counts: Vec<u64>,
    /// Images that contributed (all-zero maps are skipped).
    pub images: usize,
    /// Positions kept per image.
    pub per_image: usize,
}

impl AttentionHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Fraction of counts in the left half of the map.
    pub fn left_fraction(&self) -> f64 {
        let half = self.width / 2;
        let left: u64 = self
            .counts
            .chunks_exact(self.width)
            .map(|r| r[..half].iter().sum::<u64>())
            .sum();
        left as f64 / self.total().max(1) as f64
    }

    /// `sum |h - mirror(h)| / (2 * sum h)`: 0 for a mirror-symmetric
    /// histogram, 1 when every count sits opposite an empty cell.
    pub fn asymmetry(&self) -> f64 {
        let mirrored: Vec<u64> = self.counts.chunks_exact(self.width).flat_map(|r| r.iter().rev().copied()).collect();
        let diff: u64 = self.counts.iter().zip(&mirrored).map(|(a, b)| a.abs_diff(*b)).sum();
        diff as f64 / (2 * self.total()).max(1) as f64
    }

    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["row", "col", "count"]);
        for (k, c) in self.counts.iter().enumerate() {
            csv.row(&[&(k / self.width), &(k % self.width), c]);
        }
        csv
    }
}

/// Class activation maps for the labelled class of every image, thresholded
/// at each map's own 90th percentile: the `ceil(0.1 * h * w)` largest
/// positions (ties broken by position) are counted. The maps are the
/// head-weighted sum of the final feature maps.
pub fn attention_symmetry(params: &NetworkParams, set: &ImageBatch) -> Result<AttentionHistogram> {
    let arch = &params.arch;
    let (h, w) = arch.feature_hw();
    let plane = h * w;
    let keep = (plane as f64 * 0.1).ceil() as usize;
    let k = arch.classes;
    if params.head_b.iter().all(|&b| b == 0.0) {
        log::warn!("attention maps from a head that looks untrained");
    }
    let mut counts = vec![0u64; plane];
    let mut images = 0;
    let mut skipped = 0;
    no_grad(|| -> Result<()> {
        let net = params.bind(false)?;
        for (x, labels) in chunks(set) {
            let maps = net.feature_maps(&x)?;
            let c = maps.shape()[1];
            for (img, &label) in maps.data().chunks_exact(c * plane).zip(labels) {
                let mut cam = vec![0.0; plane];
                for ch in 0..c {
                    for p in 0..plane {
                        cam[p] += params.head_w[(ch * plane + p) * k + label] * img[ch * plane + p];
                    }
                }
                if cam.iter().all(|&v| v == 0.0) {
                    skipped += 1;
                    continue;
                }
                let mut order: Vec<usize> = (0..plane).collect();
                order.sort_by(|&a, &b| cam[b].total_cmp(&cam[a]).then(a.cmp(&b)));
                for &p in &order[..keep] {
                    counts[p] += 1;
                }
                images += 1;
            }
        }
        Ok(())
    })?;
    if skipped > 0 {
        log::warn!("attention: skipped {skipped} images with all-zero activation maps");
    }
    Ok(AttentionHistogram {
        height: h,
        width: w,
        counts,
        images,
        per_image: keep,
    })
}
