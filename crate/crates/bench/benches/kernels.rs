use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use valley_core::nn::{self, Architecture, Dataset, DatasetConfig, Mode};
use valley_core::sgd_sim::{run_sgd, NoiseKind, SgdConfig};
use valley_core::shiftgen::{build_shift_pair, enumerate_expected_losses, tight_axes};
use valley_core::valley_models::{PiecewiseValley1D, SeparableValleyND};

fn sgd(c: &mut Criterion) {
    let v = PiecewiseValley1D::tight(0.1, -1.0).unwrap();
    let cfg = SgdConfig {
        eta: 0.1,
        nu: 0.05,
        noise_kind: NoiseKind::Uniform,
        steps: 100_000,
        seed: 1,
        w_init: 0.0,
    };
    c.bench_function("sgd_1d_100k_steps", |b| b.iter(|| run_sgd(black_box(&v), &cfg).unwrap()));
}

fn enumeration(c: &mut Criterion) {
    let k = 10;
    let valley = SeparableValleyND::new(tight_axes(&vec![5.0; k], &vec![0.1; k]).unwrap(), 16, 3).unwrap();
    let model = build_shift_pair(valley, vec![2.0; k], 0.01, 3.0, 0.5, 4).unwrap();
    let bias = vec![0.5; k];
    c.bench_function("enumerate_k10", |b| b.iter(|| enumerate_expected_losses(black_box(&model), &bias).unwrap()));
}

fn network(c: &mut Criterion) {
    let arch = Architecture::parse("2-16-16-2+bn").unwrap();
    let data = Dataset::generate(DatasetConfig {
        n_train: 256,
        n_heldout: 1,
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let params = nn::init_params(&arch, 6);
    c.bench_function("forward_256", |b| {
        b.iter(|| nn::forward(&arch, black_box(&params), &data.train, Mode::Train).unwrap())
    });
    c.bench_function("backward_256", |b| {
        b.iter(|| nn::backward(&arch, black_box(&params), &data.train, Mode::Train).unwrap())
    });
}

criterion_group!(benches, sgd, enumeration, network);
criterion_main!(benches);
