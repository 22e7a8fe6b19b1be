#![allow(dead_code)]

pub mod fd;
pub mod malformed;

use distill_core::config::Method;
use distill_core::convnet::{Architecture, NetworkParams};
use distill_core::data::{Normalization, SyntheticSet};
use distill_core::objectives::{dc_distance, dm_distance, fyi_augment};
use distill_core::tensor::{grad, ops, Tensor};
use distill_core::Rng;

/// A random synthetic set with arbitrary (including extreme) pixel values.
pub fn random_set(rng: &mut Rng) -> SyntheticSet {
    let classes = 1 + rng.below(4);
    let ipc = 1 + rng.below(3);
    let channels = if rng.coin() { 1 } else { 3 };
    let (height, width) = (1 + rng.below(6), 1 + rng.below(6));
    let n = classes * ipc * channels * height * width;
    let pixels = (0..n)
        .map(|_| match rng.below(6) {
            0 => f64::from_bits(rng.next_u64()).clamp(-1e300, 1e300),
            1 => -0.0,
            _ => rng.normal(),
        })
        .map(|v| if v.is_nan() { 0.5 } else { v })
        .collect();
    SyntheticSet {
        classes,
        ipc,
        channels,
        height,
        width,
        normalization: Normalization {
            mean: (0..channels).map(|_| rng.normal()).collect(),
            std: (0..channels).map(|_| rng.uniform_in(0.1, 2.0)).collect(),
        },
        pixels,
    }
}

fn noise(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
}

/// Largest entry of `|d/dS L(S ++ flip S) - (G_id + flip G_fl)|`, where
/// `G = d/dA L(A)` at `A = S ++ flip S` is split into its two halves.
pub fn fyi_identity_gap(method: Method, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let mut arch = Architecture::for_input(1, 8, 8, 3);
    arch.net_width = 4;
    arch.blocks = 2;
    let p = NetworkParams::init(arch, &mut rng.fork(1)).unwrap();
    let real = noise(&[6, 1, 8, 8], &mut rng);
    let n = 1 + (seed % 3) as usize;
    let s = Tensor::param(&[n, 1, 8, 8], noise(&[n, 1, 8, 8], &mut rng).to_vec()).unwrap();
    let loss = |a: &Tensor| match method {
        Method::Dm => dm_distance(&p.bind(false).unwrap(), &real, a).unwrap(),
        Method::Dc => dc_distance(&p.bind(true).unwrap(), &real, a, 2).unwrap(),
    };
    let through = grad(&loss(&fyi_augment(&s).unwrap()), std::slice::from_ref(&s), false).unwrap().remove(0);
    let a = Tensor::param(&[2 * n, 1, 8, 8], fyi_augment(&s).unwrap().to_vec()).unwrap();
    let g = grad(&loss(&a), std::slice::from_ref(&a), false).unwrap().remove(0);
    let g_id = ops::batch_slice(&g, 0, n).unwrap();
    let g_fl = ops::hflip(&ops::batch_slice(&g, n, n).unwrap()).unwrap();
    ops::add(&g_id, &g_fl).unwrap().max_abs_diff(&through)
}
