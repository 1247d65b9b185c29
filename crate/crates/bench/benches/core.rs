use copt_bench::{random_instance, rejection_problem};
use copt_core::estimators::{KernelShape, KernelSpec, LocalPolyModel};
use copt_core::math::{lse, softmax};
use copt_core::optimizers::{sgd3, EntropicDual};
use copt_core::oracle::solve_lp_exact;
use copt_core::problem::{expected_gradient, WeightedSampler};
use copt_core::{DualVector, Temperature};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn bench_math(c: &mut Criterion) {
    let w: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
    let beta = Temperature::new(50.0).unwrap();
    c.bench_function("lse_64", |b| b.iter(|| lse(black_box(&w), beta).unwrap()));
    c.bench_function("softmax_64", |b| b.iter(|| softmax(black_box(&w), beta).unwrap()));
}

fn bench_gradient(c: &mut Criterion) {
    let (p, support) = rejection_problem(1000, 5, 0.1, 1);
    let beta = Temperature::new(20.0).unwrap();
    c.bench_function("exact_gradient_n1000", |b| {
        b.iter(|| expected_gradient(&p, black_box(&[0.4]), &support, beta).unwrap())
    });
}

fn bench_sgd3(c: &mut Criterion) {
    let (p, support) = rejection_problem(200, 3, 0.1, 2);
    let mut group = c.benchmark_group("sgd3");
    for t in [1_000usize, 10_000] {
        let beta = Temperature::new(t as f64 / (8.0 * (t as f64).log2())).unwrap();
        let obj = EntropicDual::new(&p, beta);
        let (mu, l) = (2.0 / beta.get(), 2.0 * beta.get());
        group.bench_with_input(BenchmarkId::from_parameter(t), &t, |b, &t| {
            b.iter(|| {
                let mut stream = WeightedSampler::new(&support, 7).unwrap();
                sgd3(&obj, &DualVector::zeros(1), mu, l, t, &mut stream, 0).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_lp(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_lp_exact");
    for n in [20usize, 200] {
        let inst = random_instance(n, 4, 2, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| b.iter(|| solve_lp_exact(inst).unwrap()));
    }
    group.finish();
}

fn bench_local_poly(c: &mut Criterion) {
    let xs: Vec<Vec<f64>> = (0..2000).map(|i| vec![(i as f64 * 0.618).fract(), (i as f64 * 0.414).fract()]).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (x[0] * 3.0).sin() * x[1]).collect();
    let model = LocalPolyModel::new(1, KernelSpec::new(KernelShape::Epanechnikov, 0.2).unwrap(), xs, ys).unwrap();
    c.bench_function("local_poly_predict_n2000", |b| b.iter(|| model.predict(black_box(&[0.5, 0.5])).unwrap()));
}

criterion_group!(benches, bench_math, bench_gradient, bench_sgd3, bench_lp, bench_local_poly);
criterion_main!(benches);
