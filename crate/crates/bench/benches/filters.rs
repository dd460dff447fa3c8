use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use lakf::dataio::simulate_measurements;
use lakf::dataio::synth::{generate, MotionKind, SynthConfig};
use lakf::kalman_core::run_filter;
use lakf::learned_filters::{learned_step, predict_mean};
use lakf::tracker::hungarian;
use lakf::{BBox, GainNetwork, LinearModelConfig, NetConfig, StateMode, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn measurements(len: usize) -> Vec<BBox> {
    let gt = generate(&SynthConfig::new(MotionKind::Maneuvering, 1, len, 3)).unwrap();
    simulate_measurements(&gt[0], 0.1, 1).unwrap().meas
}

fn kf_run(c: &mut Criterion) {
    let meas = measurements(100);
    let cfg = LinearModelConfig::new(StateMode::Xyah, 0.05);
    c.bench_function("kf_run_100", |b| b.iter(|| run_filter(black_box(&meas), &cfg).unwrap()));
}

fn siknet_step(c: &mut Criterion) {
    let meas = measurements(3);
    let net = GainNetwork::new(NetConfig::new(Variant::Siknet, StateMode::Xyah)).unwrap();
    let cfg = LinearModelConfig::new(StateMode::Xyah, 0.05);
    let init = lakf::kalman_core::init_from_measurement(&meas[0], &cfg).unwrap();
    let rec = net.start(&init, &meas[0]);
    let prior = predict_mean(&init, &cfg).unwrap();
    c.bench_function("siknet_step", |b| {
        b.iter_batched(
            || rec.clone(),
            |mut r| learned_step(&net, &prior, &mut r, &meas[1], &cfg).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn assignment(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cost: Vec<Vec<f64>> = (0..50).map(|_| (0..60).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    c.bench_function("hungarian_50x60", |b| b.iter(|| hungarian(black_box(&cost))));
}

criterion_group!(benches, kf_run, siknet_step, assignment);
criterion_main!(benches);
