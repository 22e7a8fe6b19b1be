//! Datasets: parsing, normalization, per-class sampling and the synthetic-set
//! container.

pub mod cifar;
pub mod dfrg;
pub mod export;
pub mod idx;
mod synthetic;

pub use synthetic::SyntheticSet;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::ops::hflip_raw;
use crate::tensor::Tensor;

/// Images as `[N, C, H, W]` row-major values with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
}

impl ImageBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// The listed images as a constant tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(&[indices.len(), self.channels, self.height, self.width], data)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(&[self.len(), self.channels, self.height, self.width], self.data.clone())
    }

    pub fn subset(&self, indices: &[usize]) -> ImageBatch {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        ImageBatch {
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..*self
        }
    }

    /// Zero-pads every image symmetrically to `height x width`.
    pub fn pad_to(&self, height: usize, width: usize) -> Result<ImageBatch> {
        if height < self.height || width < self.width {
            return Err(Error::InvalidArgument(format!(
                "cannot pad {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let top = (height - self.height) / 2;
        let left = (width - self.width) / 2;
        let mut data = vec![0.0; self.len() * self.channels * height * width];
        for (src, dst) in self
            .data
            .chunks_exact(self.height * self.width)
            .zip(data.chunks_exact_mut(height * width))
        {
            for i in 0..self.height {
                dst[(top + i) * width + left..(top + i) * width + left + self.width]
                    .copy_from_slice(&src[i * self.width..(i + 1) * self.width]);
            }
        }
        Ok(ImageBatch {
            height,
            width,
            data,
            labels: self.labels.clone(),
            ..*self
        })
    }

    /// Indices of each class, in dataset order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Per-channel affine normalization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Mean and population standard deviation of every channel.
    pub fn fit(batch: &ImageBatch) -> Self {
        let plane = batch.height * batch.width;
        let mut sum = vec![0.0; batch.channels];
        let mut sq = vec![0.0; batch.channels];
        for (k, p) in batch.data.chunks_exact(plane).enumerate() {
            let c = k % batch.channels;
            sum[c] += p.iter().sum::<f64>();
            sq[c] += p.iter().map(|v| v * v).sum::<f64>();
        }
        let count = (batch.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-12))
            .collect();
        Normalization { mean, std }
    }

    fn map(&self, data: &mut [f64], plane: usize, f: impl Fn(f64, f64, f64) -> f64) {
        let c = self.mean.len();
        for (k, p) in data.chunks_exact_mut(plane).enumerate() {
            let (m, s) = (self.mean[k % c], self.std[k % c]);
            p.iter_mut().for_each(|v| *v = f(*v, m, s));
        }
    }

    pub fn normalize(&self, data: &mut [f64], plane: usize) {
        self.map(data, plane, |v, m, s| (v - m) / s);
    }

    pub fn denormalize(&self, data: &mut [f64], plane: usize) {
        self.map(data, plane, |v, m, s| v * s + m);
    }
}

/// A dataset split into per-class pools, already normalized.
#[derive(Debug, Clone)]
pub struct RealSet {
    pub images: ImageBatch,
    pub by_class: Vec<Vec<usize>>,
    pub normalization: Normalization,
}

impl RealSet {
    pub fn new(images: ImageBatch, normalization: Normalization) -> Self {
        let by_class = images.class_indices();
        RealSet {
            images,
            by_class,
            normalization,
        }
    }

    pub fn classes(&self) -> usize {
        self.images.classes
    }

    /// `n` distinct images of `class` drawn without replacement (all of them
    /// when the class has fewer).
    pub fn sample_class(&self, class: usize, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let pool = &self.by_class[class];
        if pool.is_empty() {
            return Err(Error::InvalidArgument(format!("class {class} has no images")));
        }
        let picks: Vec<usize> = rng.choose_indices(pool.len(), n).into_iter().map(|i| pool[i]).collect();
        self.images.gather(&picks)
    }

    /// The first `n` images of every class (fewer if a class is short).
    pub fn take_per_class(&self, n: usize) -> RealSet {
        let idx: Vec<usize> = self.by_class.iter().flat_map(|c| c.iter().take(n).copied()).collect();
        RealSet::new(self.images.subset(&idx), self.normalization.clone())
    }
}

/// Appends the horizontal mirror of every image, doubling the set; the result
/// contains the flip of each of its members.
pub fn make_flip_closed(real: &RealSet) -> RealSet {
    let b = &real.images;
    let mut data = b.data.clone();
    data.extend(hflip_raw(&b.data, b.width));
    let mut labels = b.labels.clone();
    labels.extend_from_slice(&b.labels);
    RealSet::new(
        ImageBatch {
            data,
            labels,
            ..b.clone()
        },
        real.normalization.clone(),
    )
}

/// Metadata of a prepared dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub normalization: Normalization,
}

/// A normalized train/test pair ready for distillation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: RealSet,
    pub test: ImageBatch,
}

/// Datasets known to [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    FashionMnist,
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion-mnist" | "fashion_mnist" | "fmnist" => Ok(DatasetKind::FashionMnist),
            "cifar10" | "cifar-10" => Ok(DatasetKind::Cifar10),
            "cifar100" | "cifar-100" => Ok(DatasetKind::Cifar100),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn find(dir: &Path, names: &[&str]) -> Result<PathBuf> {
    names
        .iter()
        .map(|n| dir.join(n))
        .find(|p| p.exists())
        .ok_or_else(|| Error::io(dir.join(names[0]), std::io::ErrorKind::NotFound.into()))
}

/// Loads `name` from `dir`, scales pixels to `[0, 1]`, pads 28x28 digits to
/// 32x32 and normalizes with statistics of the (unpadded) training split.
pub fn load_dataset(name: &str, dir: &Path) -> Result<Dataset> {
    let kind = DatasetKind::parse(name)?;
    let (train, test) = match kind {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let train = idx::load_idx(
                &find(dir, &["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?,
                &find(dir, &["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?,
            )?;
            let test = idx::load_idx(
                &find(dir, &["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?,
                &find(dir, &["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?,
            )?;
            (train, test)
        }
        DatasetKind::Cifar10 => {
            let files: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            let train = cifar::load_cifar_files(&files, cifar::CifarVariant::Cifar10)?;
            let test = cifar::load_cifar_files(&[dir.join("test_batch.bin")], cifar::CifarVariant::Cifar10)?;
            (train, test)
        }
        DatasetKind::Cifar100 => {
            let train = cifar::load_cifar_files(&[dir.join("train.bin")], cifar::CifarVariant::Cifar100)?;
            let test = cifar::load_cifar_files(&[dir.join("test.bin")], cifar::CifarVariant::Cifar100)?;
            (train, test)
        }
    };
    prepare(name, train, test)
}

/// Normalizes a raw `[0, 1]` train/test pair, padding 28x28 inputs to 32x32.
pub fn prepare(name: &str, train: ImageBatch, test: ImageBatch) -> Result<Dataset> {
    let normalization = Normalization::fit(&train);
    let pad = |b: ImageBatch| -> Result<ImageBatch> {
        if b.height == 28 && b.width == 28 {
            b.pad_to(32, 32)
        } else {
            Ok(b)
        }
    };
    let (mut train, mut test) = (pad(train)?, pad(test)?);
    let plane = train.height * train.width;
    normalization.normalize(&mut train.data, plane);
    normalization.normalize(&mut test.data, plane);
    let meta = DatasetMeta {
        name: name.to_string(),
        channels: train.channels,
        height: train.height,
        width: train.width,
        classes: train.classes,
        train_count: train.len(),
        test_count: test.len(),
        normalization: normalization.clone(),
    };
    Ok(Dataset {
        meta,
        train: RealSet::new(train, normalization),
        test,
    })
}
