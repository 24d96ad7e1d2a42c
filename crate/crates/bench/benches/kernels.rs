use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tiltsens_bench::{heavy_values, linear_data};
use tiltsens_core::estimator::huber_threshold;
use tiltsens_core::outcome::CvProblem;
use tiltsens_core::Arm;

fn cv_criterion(c: &mut Criterion) {
    let mut g = c.benchmark_group("cv_criterion");
    for n in [200, 800] {
        let ds = linear_data(n, 1);
        let idx = ds.arm_indices(Arm::Treated);
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| ds.rows()[i].x.clone()).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| ds.rows()[i].y).collect();
        let mut p = CvProblem::new(&xs, &ys);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| p.criterion(black_box(&[1.0, 0.5]), black_box(0.6)).unwrap())
        });
    }
    g.finish();
}

fn huber(c: &mut Criterion) {
    let mut g = c.benchmark_group("huber_threshold");
    for n in [100, 10_000] {
        let v = heavy_values(n, 2);
        g.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| b.iter(|| huber_threshold(black_box(v))));
    }
    g.finish();
}

criterion_group!(benches, cv_criterion, huber);
criterion_main!(benches);
