use std::time::Instant;

use distill_core::convnet::{Architecture, NetworkParams};
use distill_core::tensor::{ops, Tensor};
use distill_core::Rng;

fn time<T>(label: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    println!("  {label:<28} {:8.2} ms", t.elapsed().as_secs_f64() * 1e3);
    out
}

fn main() {
    for width in [16usize, 128] {
        let mut arch = Architecture::for_input(1, 32, 32, 10);
        arch.net_width = width;
        let p = NetworkParams::init(arch, &mut Rng::new(0)).unwrap();
        let net = p.bind(false).unwrap();
        let n = 64;
        println!("width {width}, batch {n}");
        let x = Tensor::new(&[n, 1, 32, 32], (0..n * 1024).map(|i| (i as f64).sin()).collect()).unwrap();
        time("features", || net.features(&x).unwrap());
        let w: Vec<Tensor> = net.conv_weights();
        let b = Tensor::zeros(&[width]).unwrap();
        let mut h = x.clone();
        for (i, wi) in w.iter().enumerate() {
            let c = time(&format!("conv{i}"), || ops::conv2d_nobias(&h, wi, 1).unwrap());
            let c = time(&format!("bias{i}"), || ops::add_channel_bias(&c, &b).unwrap());
            let r = time(&format!("relu{i}"), || ops::relu(&c));
            h = time(&format!("pool{i}"), || ops::avg_pool2(&r).unwrap());
        }
        let xs = Tensor::param(&[10, 1, 32, 32], (0..10 * 1024).map(|i| (i as f64).cos()).collect()).unwrap();
        time("fwd+bwd 10 imgs", || {
            ops::sum(&net.features(&xs).unwrap()).backward().unwrap();
        });
    }
}
