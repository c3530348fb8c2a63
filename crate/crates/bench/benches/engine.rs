use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use evolab_bench::{particles, specs, STEP};
use evolab_core::engine::{simulate, PathConfig, SeedLineage};
use evolab_core::expr::{parse, Compiled};
use evolab_core::kde::{Bandwidth, KernelDensity};
use evolab_core::measures::exp_moment;

fn paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    let (n, dt) = (4096, 0.1);
    group.throughput(Throughput::Elements((n as f64 * dt / STEP) as u64));
    for (name, spec) in specs() {
        let x = vec![0.5; spec.dim];
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                simulate(
                    &spec,
                    0.0,
                    dt,
                    black_box(&x),
                    n,
                    &PathConfig::with_step(STEP),
                    &SeedLineage::new(1),
                )
                .unwrap()
            })
        });
    }
    group.finish();
}

fn expressions(c: &mut Criterion) {
    let code = Compiled::new(parse("-x1 - x1^3 + sin(t) * exp(-x2^2)", 2).unwrap());
    c.bench_function("expr_eval", |b| {
        b.iter(|| code.eval(black_box(0.3), black_box(&[0.7, -1.2])).unwrap())
    });
}

fn densities(c: &mut Criterion) {
    let (_, spec) = specs().remove(1);
    let mu = particles(&spec, 20_000);
    let kde = KernelDensity::from_points(&mu.particles, 1, &Bandwidth::Silverman).unwrap();
    c.bench_function("kde_eval_20k", |b| b.iter(|| kde.eval(black_box(&[0.4]))));
    c.bench_function("exp_moment_20k", |b| {
        b.iter(|| exp_moment(black_box(&mu), 0.3, 2.0).unwrap())
    });
}

criterion_group!(benches, paths, expressions, densities);
criterion_main!(benches);
