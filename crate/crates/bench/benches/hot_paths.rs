//! Benchmarks for the three hot paths: the per-sample-scale loss with full
//! analytic gradients, verification threshold selection, and the Monte-Carlo
//! error-probability estimator.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use scaleface::embeddings::{generate_synthetic, make_pairs, normalize, SyntheticSpec};
use scaleface::evaluation::tar_at_far;
use scaleface::gaussian::{simulate_error_prob, GaussianModelSpec};
use scaleface::losses::{angular_margin_loss_free, DEFAULT_COSINE_CLAMP};
use scaleface::similarity::cosine_pairs;

fn bench_loss(c: &mut Criterion) {
    let spec = SyntheticSpec {
        dim: 32,
        num_classes: 10,
        samples_per_class: 20,
        scale_min: 1.0,
        scale_max: 10.0,
        noise_sigma: 1.0,
        seed: 0,
    };
    let data = generate_synthetic(&spec).unwrap();
    let unit = normalize(&data.set).unwrap();
    let labels = data.set.labels().to_vec();
    let scales: Vec<f64> = (0..unit.len()).map(|i| 1.0 + (i % 9) as f64).collect();
    c.bench_function("per_sample_loss_200x32", |b| {
        b.iter(|| {
            angular_margin_loss_free(
                black_box(unit.unit_vectors()),
                black_box(&data.centroids),
                &labels,
                &scales,
                0.5,
                DEFAULT_COSINE_CLAMP,
            )
            .unwrap()
        })
    });
}

fn bench_tar(c: &mut Criterion) {
    let spec = SyntheticSpec {
        dim: 32,
        num_classes: 10,
        samples_per_class: 200,
        scale_min: 1.0,
        scale_max: 10.0,
        noise_sigma: 1.0,
        seed: 0,
    };
    let data = generate_synthetic(&spec).unwrap();
    let unit = normalize(&data.set).unwrap();
    let pairs = make_pairs(data.set.labels(), 5000, 5000, 1).unwrap();
    let scores = cosine_pairs(&unit, &pairs).unwrap();
    c.bench_function("tar_at_far_10k_pairs", |b| {
        b.iter(|| tar_at_far(black_box(&scores.scores), &scores.labels, 0.05).unwrap())
    });
}

fn bench_simulation(c: &mut Criterion) {
    let spec = GaussianModelSpec::new(128, 8.0, 1.0, 0.6, 7).unwrap();
    c.bench_function("simulate_error_prob_100k", |b| {
        b.iter(|| simulate_error_prob(black_box(&spec), 100_000, 11).unwrap())
    });
}

criterion_group!(benches, bench_loss, bench_tar, bench_simulation);
criterion_main!(benches);
