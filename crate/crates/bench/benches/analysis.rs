use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;
use smartpoll::distributions::{waiting_time_lst, CycleForm, CycleVariant};
use smartpoll::mva::solve_mva;
use smartpoll::strategy::{optimize, routing_template, Objective};
use smartpoll::testkit::{example2, random_model};
use std::hint::black_box;

fn mva(c: &mut Criterion) {
    let small = example2();
    let big = random_model(11, 4, 0.7, true);
    c.bench_function("mva two queues", |b| b.iter(|| solve_mva(black_box(&small)).unwrap()));
    c.bench_function("mva four queues", |b| b.iter(|| solve_mva(black_box(&big)).unwrap()));
}

fn transforms(c: &mut Criterion) {
    let m = example2();
    let w = Complex64::new(0.3, 0.1);
    c.bench_function("waiting-time LST with virtual queue", |b| {
        b.iter(|| waiting_time_lst(black_box(&m), 0, w).unwrap())
    });
    let r = random_model(3, 3, 0.7, false);
    c.bench_function("cycle LST general form", |b| {
        b.iter(|| smartpoll::distributions::cycle_time_lst(&r, 1, CycleVariant::VisitBeginning, CycleForm::General, w).unwrap())
    });
}

fn strategies(c: &mut Criterion) {
    let t = routing_template(3, 0.7);
    let mut g = c.benchmark_group("strategy");
    g.sample_size(10);
    g.bench_function("optimize three queues", |b| b.iter(|| optimize(black_box(&t), 0.6, Objective::Minimize).unwrap()));
    g.finish();
}

criterion_group!(benches, mva, transforms, strategies);
criterion_main!(benches);
