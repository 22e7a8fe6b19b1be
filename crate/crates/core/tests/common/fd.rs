//! Finite-difference oracle for every differentiable operation.

use std::rc::Rc;

use distill_core::augment::{apply_aug, AugParams, AugSpec};
use distill_core::convnet::{cross_entropy, Architecture, NetworkParams};
use distill_core::gradcheck::{numerical_gradient, relative_error, STEP};
use distill_core::objectives::{dc_distance, dm_distance, fyi_augment};
use distill_core::tensor::ops::{self, BlendScope, SampleMap};
use distill_core::tensor::{grad, no_grad, Tensor};
use distill_core::{Result, Rng};

type OpFn = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;

pub struct Case {
    pub name: &'static str,
    shapes: Vec<Vec<usize>>,
    /// Inputs are drawn in [0.5, 1.5] instead of from N(0, 1).
    positive: bool,
    f: OpFn,
}

fn case(name: &'static str, shapes: &[&[usize]], f: impl Fn(&[Tensor]) -> Result<Tensor> + 'static) -> Case {
    Case {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        positive: false,
        f: Box::new(f),
    }
}

fn positive(mut c: Case) -> Case {
    c.positive = true;
    c
}

fn small_arch() -> Architecture {
    let mut a = Architecture::for_input(1, 8, 8, 3);
    a.net_width = 4;
    a.blocks = 2;
    a
}

fn rotate(deg: f64, x: &Tensor) -> Result<Tensor> {
    apply_aug(
        &AugSpec {
            params: AugParams::Rotate { degrees: deg },
            seed: 0,
        },
        x,
    )
}

/// Every operation under test, with small shapes.
pub fn cases() -> Vec<Case> {
    let img: &[usize] = &[2, 2, 4, 6];
    let affine = Rc::new(SampleMap::affine(4, 6, [[0.9, 0.2, 0.3], [-0.1, 1.1, -0.4]]));
    let affine2 = affine.clone();
    let mut v = vec![
        case("add", &[&[3, 4], &[3, 4]], |x| ops::add(&x[0], &x[1])),
        case("sub", &[&[3, 4], &[3, 4]], |x| ops::sub(&x[0], &x[1])),
        case("mul", &[&[3, 4], &[3, 4]], |x| ops::mul(&x[0], &x[1])),
        case("scale", &[&[5]], |x| Ok(ops::scale(&x[0], -1.7))),
        case("add_scalar", &[&[5]], |x| Ok(ops::add_scalar(&x[0], 0.3))),
        case("relu", &[&[4, 5]], |x| Ok(ops::relu(&x[0]))),
        positive(case("rsqrt", &[&[6]], |x| Ok(ops::rsqrt(&x[0])))),
        case("sum", &[&[3, 2]], |x| Ok(ops::sum(&x[0]))),
        case("mean", &[&[3, 2]], |x| Ok(ops::mean(&x[0]))),
        case("mean_rows", &[&[3, 4]], |x| ops::mean_rows(&x[0])),
        case("row_sum", &[&[3, 4]], |x| ops::row_sum(&x[0])),
        case("reshape", &[&[3, 4]], |x| ops::reshape(&x[0], &[2, 6])),
        case("transpose", &[&[3, 4]], |x| ops::transpose(&x[0])),
        case("matmul", &[&[3, 4], &[4, 2]], |x| ops::matmul(&x[0], &x[1])),
        case("dense", &[&[3, 4], &[4, 5], &[5]], |x| ops::dense(&x[0], &x[1], &x[2])),
        case("softmax", &[&[3, 5]], |x| ops::softmax(&x[0])),
        case("log_softmax", &[&[3, 5]], |x| ops::log_softmax(&x[0])),
        case("cross_entropy", &[&[3, 5]], |x| cross_entropy(&x[0], &[0, 4, 2])),
        case("conv2d", &[img, &[3, 2, 3, 3], &[3]], |x| ops::conv2d(&x[0], &x[1], &x[2], 1)),
        case("conv2d_nopad", &[img, &[3, 2, 3, 3]], |x| ops::conv2d_nobias(&x[0], &x[1], 0)),
        case("conv2d_input_grad", &[&[2, 3, 4, 6], &[3, 2, 3, 3]], |x| {
            ops::conv2d_input_grad(&x[0], &x[1], 1, &[2, 2, 4, 6])
        }),
        case("conv2d_weight_grad", &[img, &[2, 3, 4, 6]], |x| ops::conv2d_weight_grad(&x[0], &x[1], 1, &[3, 2, 3, 3])),
        case("avg_pool2", &[img], |x| ops::avg_pool2(&x[0])),
        case("channel_sum", &[img], |x| ops::channel_sum(&x[0])),
        case("add_channel_bias", &[img, &[2]], |x| ops::add_channel_bias(&x[0], &x[1])),
        case("spatial_sum", &[img], |x| ops::spatial_sum(&x[0])),
        case("hflip", &[img], |x| ops::hflip(&x[0])),
        case("batch_concat", &[img, &[1, 2, 4, 6]], |x| ops::batch_concat(&x[0], &x[1])),
        case("batch_slice", &[&[3, 2, 4, 6]], |x| ops::batch_slice(&x[0], 1, 2)),
        case("resample", &[img], move |x| ops::resample(&x[0], &affine)),
        case("resample_adjoint", &[img], move |x| ops::resample_adjoint(&x[0], &affine2)),
        case("blend_channels", &[&[2, 3, 4, 6]], |x| ops::image_blend(&x[0], 0.6, 0.4, BlendScope::Channels)),
        case("blend_image", &[&[2, 3, 4, 6]], |x| ops::image_blend(&x[0], 1.3, -0.3, BlendScope::Image)),
        case("rotate_10deg", &[img], |x| rotate(10.0, &x[0])),
        case("fyi_augment", &[img], |x| fyi_augment(&x[0])),
        case("diamond", &[&[4, 3]], |x| {
            // x feeds two branches that meet again.
            let a = ops::relu(&x[0]);
            let b = ops::mul(&x[0], &x[0])?;
            ops::mul(&ops::add(&a, &b)?, &x[0])
        }),
    ];
    v.push(case("convnet_logits", &[&[2, 1, 8, 8]], |x| {
        let p = NetworkParams::init(small_arch(), &mut Rng::new(11))?;
        p.bind(false)?.logits(&x[0])
    }));
    v.push(case("convnet_instance_norm", &[&[2, 1, 8, 8]], |x| {
        let mut a = small_arch();
        a.instance_norm = true;
        let p = NetworkParams::init(a, &mut Rng::new(12))?;
        p.bind(false)?.features(&x[0])
    }));
    v
}

/// End-to-end matching losses, differentiated with respect to the synthetic
/// pixels (the second input) only.
pub fn objective_cases() -> Vec<Case> {
    vec![
        case("dm_distance", &[&[5, 1, 8, 8], &[2, 1, 8, 8]], |x| {
            let p = NetworkParams::init(small_arch(), &mut Rng::new(21))?;
            dm_distance(&p.bind(false)?, &x[0], &x[1])
        }),
        case("dc_distance", &[&[5, 1, 8, 8], &[2, 1, 8, 8]], |x| {
            let p = NetworkParams::init(small_arch(), &mut Rng::new(22))?;
            dc_distance(&p.bind(true)?, &x[0], &x[1], 1)
        }),
        case("dm_fyi", &[&[5, 1, 8, 8], &[1, 1, 8, 8]], |x| {
            let p = NetworkParams::init(small_arch(), &mut Rng::new(23))?;
            dm_distance(&p.bind(false)?, &x[0], &fyi_augment(&x[1])?)
        }),
    ]
}

fn inputs(c: &Case, rng: &mut Rng) -> Vec<Vec<f64>> {
    c.shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            (0..n)
                .map(|_| if c.positive { rng.uniform_in(0.5, 1.5) } else { rng.normal() })
                .collect()
        })
        .collect()
}

fn tensors(c: &Case, data: &[Vec<f64>], track: bool) -> Result<Vec<Tensor>> {
    data.iter()
        .zip(&c.shapes)
        .map(|(d, s)| if track { Tensor::param(s, d.clone()) } else { Tensor::new(s, d.clone()) })
        .collect()
}

/// Relative error of one random instance. Only inputs in `wrt` are checked.
pub fn check_instance(c: &Case, seed: u64, wrt: &[usize]) -> Result<f64> {
    let mut rng = Rng::new(seed);
    let data = inputs(c, &mut rng);
    let leaves = tensors(c, &data, true)?;
    let out = (c.f)(&leaves)?;
    let weights = Rc::new((0..out.numel()).map(|_| rng.normal()).collect::<Vec<f64>>());
    let loss = ops::sum(&ops::mul_const(&out, &weights)?);
    let chosen: Vec<Tensor> = wrt.iter().map(|&i| leaves[i].clone()).collect();
    let analytic = grad(&loss, &chosen, false)?;
    let mut worst: f64 = 0.0;
    for (k, &i) in wrt.iter().enumerate() {
        let numeric = numerical_gradient(&data[i], None, STEP, |probe| {
            let mut d = data.clone();
            d[i] = probe.to_vec();
            no_grad(|| {
                let o = (c.f)(&tensors(c, &d, false).expect("shapes match")).expect("forward succeeds");
                o.data().iter().zip(weights.iter()).map(|(a, b)| a * b).sum()
            })
        });
        worst = worst.max(relative_error(analytic[k].data(), &numeric));
    }
    Ok(worst)
}

/// Worst relative error over `instances` seeds for every input of `c`.
pub fn worst_error(c: &Case, instances: usize, wrt: &[usize]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        worst = worst.max(check_instance(c, 1000 + i as u64, wrt)?);
    }
    Ok(worst)
}

/// `(name, worst relative error)` for every op and objective.
pub fn run_suite(instances: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    for c in cases() {
        let all: Vec<usize> = (0..c.shapes.len()).collect();
        out.push((c.name, worst_error(&c, instances, &all)?));
    }
    for c in objective_cases() {
        out.push((c.name, worst_error(&c, instances, &[1])?));
    }
    Ok(out)
}
