use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wvm_bench::fixture;
use wvm_core::objective::Objective;
use wvm_core::{proportional_weights, residuals, wasserstein_variance, LinearModel};

fn wasserstein(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein_variance");
    for n in [100, 500, 2000] {
        let ds = fixture(4, n, 1);
        let w = proportional_weights(&ds);
        let views = residuals(&LinearModel::zeros(ds.p()), &ds).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &views, |b, v| {
            b.iter(|| wasserstein_variance(black_box(v), &w).unwrap())
        });
    }
    group.finish();
}

fn objective(c: &mut Criterion) {
    let mut group = c.benchmark_group("objective_eval");
    for p in [5, 14, 30] {
        let ds = fixture(p, 500, 2);
        let w = proportional_weights(&ds);
        let obj = Objective::new(&ds, &w, &vec![false; p]).unwrap();
        let theta = vec![0.1; obj.dim()];
        group.bench_with_input(BenchmarkId::from_parameter(p), &theta, |b, t| {
            b.iter(|| obj.eval(black_box(t)))
        });
    }
    group.finish();
}

criterion_group!(benches, wasserstein, objective);
criterion_main!(benches);
