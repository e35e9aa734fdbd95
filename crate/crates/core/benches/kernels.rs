//! Hot kernels under the current build. Compare the two builds with
//!
//! ```text
//! cargo bench -p hignn-core --no-default-features -- --save-baseline sequential
//! cargo bench -p hignn-core -- --baseline sequential
//! ```
//!
//! With `parallel` on, the `workers` group also times each kernel in a
//! one-thread pool against the default pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use hignn_core::graph::normalize_adjacency;
use hignn_core::homophily::{build_hi_adjacency, hetero_info, HeteroInfoMatrix};
use hignn_core::synth::{generate, SynthSpec};
use hignn_core::tensor::{DenseMatrix, Propagator};
use hignn_core::theory::{mc_simulate_hhat, TheoryParams};

fn hetero(n: usize) -> HeteroInfoMatrix {
    let ds = generate(&SynthSpec {
        n_nodes: n,
        ..SynthSpec::default()
    })
    .unwrap();
    hetero_info(&ds.graph, &ds.labels, ds.n_classes).unwrap()
}

fn propagator(n: usize) -> (Propagator, DenseMatrix) {
    let ds = generate(&SynthSpec {
        n_nodes: n,
        ..SynthSpec::default()
    })
    .unwrap();
    let hi = hetero_info(&ds.graph, &ds.labels, ds.n_classes).unwrap();
    let rewired = build_hi_adjacency(&hi, 0.95).unwrap();
    let a = normalize_adjacency(&rewired.union(&ds.graph).unwrap());
    let z = DenseMatrix::filled(n, 64, 0.5);
    (Propagator::sparse(a.matrix().clone()), z)
}

fn mc_params() -> TheoryParams {
    TheoryParams::new(0.3, 0.2, 0.8, 5).unwrap()
}

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("hi_adjacency");
    group.sample_size(10);
    for n in [1000, 2000] {
        let hi = hetero(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &hi, |b, hi| {
            b.iter(|| build_hi_adjacency(black_box(hi), 0.9).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(10);
    group.bench_function("100k_pairs", |b| {
        b.iter(|| mc_simulate_hhat(black_box(mc_params()), 100_000, 7).unwrap())
    });
    group.finish();

    let mut group = c.benchmark_group("spmm");
    let (p, z) = propagator(2000);
    group.bench_function("n2000_d64", |b| b.iter(|| p.apply(black_box(&z)).unwrap()));
    group.finish();
}

#[cfg(feature = "parallel")]
fn workers(c: &mut Criterion) {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    let hi = hetero(2000);
    let (p, z) = propagator(2000);
    let mut group = c.benchmark_group("workers");
    group.sample_size(10);
    for (label, pool) in [("1", &one), ("all", &all)] {
        group.bench_function(BenchmarkId::new("hi_adjacency", label), |b| {
            pool.install(|| b.iter(|| build_hi_adjacency(black_box(&hi), 0.9).unwrap()))
        });
        group.bench_function(BenchmarkId::new("monte_carlo", label), |b| {
            pool.install(|| b.iter(|| mc_simulate_hhat(black_box(mc_params()), 100_000, 7).unwrap()))
        });
        group.bench_function(BenchmarkId::new("spmm", label), |b| {
            pool.install(|| b.iter(|| p.apply(black_box(&z)).unwrap()))
        });
    }
    group.finish();
}

#[cfg(not(feature = "parallel"))]
fn workers(_: &mut Criterion) {}

criterion_group!(benches, kernels, workers);
criterion_main!(benches);
