//! Parallel vs single-worker throughput on the hot paths: generator
//! forward, block-matching tracking and phantom rendering.
//!
//! `cargo bench -p ccgan-core` compares a one-thread pool against the full
//! pool; `--no-default-features` builds the rayon-free fallback.

use ccgan_core::networks::{build_generator, GeneratorSpec};
use ccgan_core::nn::Tensor;
use ccgan_core::par;
use ccgan_core::phantom::{preset, render_phantom};
use ccgan_core::tracking::{track, TrackingConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn modes() -> Vec<(&'static str, usize)> {
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    vec![("sequential", 1), ("parallel", all)]
}

fn generator(c: &mut Criterion) {
    let g = build_generator::<f32>(GeneratorSpec::reduced(8), 0).unwrap();
    let x = Tensor::<f32>::from_vec([4, 1, 64, 64], (0..4 * 64 * 64).map(|i| (i % 97) as f32 / 97.0).collect())
        .unwrap();
    let mut group = c.benchmark_group("generator_forward");
    group.sample_size(10);
    for (name, workers) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(g.forward(&x).unwrap())))
        });
    }
    group.finish();
}

fn tracking(c: &mut Criterion) {
    let pre = render_phantom(&preset("linear-like", 256, 128, 1).unwrap()).unwrap();
    let post = render_phantom(&preset("linear-like", 256, 128, 2).unwrap()).unwrap();
    let cfg = TrackingConfig::default();
    let mut group = c.benchmark_group("track");
    group.sample_size(10);
    for (name, workers) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(track(&pre, &post, &cfg).unwrap())))
        });
    }
    group.finish();
}

fn rendering(c: &mut Criterion) {
    let spec = preset("phased-like", 128, 128, 3).unwrap();
    let mut group = c.benchmark_group("render_phantom");
    group.sample_size(10);
    for (name, workers) in modes() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &workers, |b, &w| {
            b.iter(|| par::with_workers(w, || black_box(render_phantom(&spec).unwrap())))
        });
    }
    group.finish();
}

criterion_group!(benches, generator, tracking, rendering);
criterion_main!(benches);
