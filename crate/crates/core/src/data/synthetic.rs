use super::{ImageBatch, Normalization, RealSet};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A distilled set: `ipc` images for each of `classes` classes, stored
/// class-major in normalized pixel space.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    pub classes: usize,
    pub ipc: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub normalization: Normalization,
    pub pixels: Vec<f64>,
}

impl SyntheticSet {
    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn class_len(&self) -> usize {
        self.ipc * self.image_len()
    }

    pub fn class_pixels(&self, class: usize) -> &[f64] {
        &self.pixels[class * self.class_len()..(class + 1) * self.class_len()]
    }

    pub fn class_pixels_mut(&mut self, class: usize) -> &mut [f64] {
        let n = self.class_len();
        &mut self.pixels[class * n..(class + 1) * n]
    }

    /// `S_c` as an `[ipc, C, H, W]` tensor.
    pub fn class_tensor(&self, class: usize) -> Tensor {
        Tensor::new(
            &[self.ipc, self.channels, self.height, self.width],
            self.class_pixels(class).to_vec(),
        )
        .expect("class slice matches its shape")
    }

    /// All images with labels `0,..,0,1,..` in class order.
    pub fn to_batch(&self) -> ImageBatch {
        ImageBatch {
            channels: self.channels,
            height: self.height,
            width: self.width,
            classes: self.classes,
            data: self.pixels.clone(),
            labels: (0..self.classes).flat_map(|c| std::iter::repeat_n(c, self.ipc)).collect(),
        }
    }

    /// Initializes with `ipc` distinct random real images per class.
    pub fn from_real(real: &RealSet, ipc: usize, rng: &mut Rng) -> Result<Self> {
        let b = &real.images;
        let mut pixels = Vec::with_capacity(real.classes() * ipc * b.image_len());
        for (c, pool) in real.by_class.iter().enumerate() {
            if pool.len() < ipc {
                return Err(Error::InvalidArgument(format!(
                    "class {c} has {} images, fewer than ipc = {ipc}",
                    pool.len()
                )));
            }
            for i in rng.choose_indices(pool.len(), ipc) {
                pixels.extend_from_slice(b.image(pool[i]));
            }
        }
        Ok(SyntheticSet {
            classes: real.classes(),
            ipc,
            channels: b.channels,
            height: b.height,
            width: b.width,
            normalization: real.normalization.clone(),
            pixels,
        })
    }

    /// Initializes with standard normal pixels.
    pub fn gaussian(real: &RealSet, ipc: usize, rng: &mut Rng) -> Self {
        let b = &real.images;
        let len = real.classes() * ipc * b.image_len();
        SyntheticSet {
            classes: real.classes(),
            ipc,
            channels: b.channels,
            height: b.height,
            width: b.width,
            normalization: real.normalization.clone(),
            pixels: (0..len).map(|_| rng.normal()).collect(),
        }
    }
}
