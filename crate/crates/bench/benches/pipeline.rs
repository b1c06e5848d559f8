use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ips_bench::{observations, sparse_room};
use ips_core::gpr::{gpr_fit, GprHyperparams};
use ips_core::{densify, localize, HyperPolicy, LocalizerConfig};

fn bench_gpr(c: &mut Criterion) {
    let mut group = c.benchmark_group("gpr_fit");
    for n in [12usize, 54, 196] {
        let side = (n as f64).sqrt().ceil() as usize;
        let points: Vec<_> =
            (0..n).map(|i| ([(i % side) as f64 + 0.5, (i / side) as f64 + 0.5], -60.0 - (i % 7) as f64)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &points, |b, p| {
            b.iter(|| gpr_fit(black_box(p), GprHyperparams::DEFAULT).unwrap())
        });
    }
    group.finish();
}

fn bench_densify(c: &mut Criterion) {
    let (_, sparse) = sparse_room(5);
    let mut group = c.benchmark_group("densify");
    group.sample_size(10);
    group.bench_function("fixed", |b| b.iter(|| densify(black_box(&sparse), 1.0, HyperPolicy::Fixed).unwrap()));
    group.bench_function("grid-search", |b| {
        b.iter(|| densify(black_box(&sparse), 1.0, HyperPolicy::GridSearch).unwrap())
    });
    group.finish();
}

fn bench_localize(c: &mut Criterion) {
    let (sc, sparse) = sparse_room(5);
    let map = densify(&sparse, 1.0, HyperPolicy::Fixed).unwrap().map;
    let obs = observations(&sc, 64);
    c.bench_function("localize", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % obs.len();
            localize(black_box(&obs[i]), &map, LocalizerConfig::default()).unwrap()
        })
    });
}

criterion_group!(benches, bench_gpr, bench_densify, bench_localize);
criterion_main!(benches);
