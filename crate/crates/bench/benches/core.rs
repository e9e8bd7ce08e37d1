use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use treeprune::cutdown::theta_simulate;
use treeprune::generators::{crt_scale, gw_bimeasure, gw_conditioned, MuChoice, NuChoice, OffspringDistribution};
use treeprune::pruning::{semigroup_exact, simulate, simulate_naive};
use treeprune::rng;
use treeprune::testfn::default_suite;
use treeprune::BiMeasureTree;

fn poisson() -> OffspringDistribution {
    "poisson:1.0".parse().unwrap()
}

fn instance(n: usize, mu: MuChoice, nu: NuChoice) -> BiMeasureTree {
    gw_bimeasure(&poisson(), n, crt_scale(n, 1.0), mu, nu, &mut rng::master(1)).unwrap()
}

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("gw_conditioned");
    for n in [100, 1000, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            let mut r = rng::master(7);
            b.iter(|| gw_conditioned(&poisson(), n, &mut r).unwrap())
        });
    }
    g.finish();
}

fn pruning(c: &mut Criterion) {
    let mut g = c.benchmark_group("simulate");
    for n in [100, 1000] {
        let x = instance(n, MuChoice::Ske, NuChoice::Ske);
        g.bench_with_input(BenchmarkId::new("incremental", n), &x, |b, x| {
            let mut r = rng::master(3);
            b.iter(|| simulate(x, 2.0, &mut r).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("naive", n), &x, |b, x| {
            let mut r = rng::master(3);
            b.iter(|| simulate_naive(x, 2.0, &mut r).unwrap())
        });
    }
    g.finish();
}

fn cutdown(c: &mut Criterion) {
    let mut g = c.benchmark_group("theta_simulate");
    for n in [100, 1000] {
        let x = instance(n, MuChoice::Nod, NuChoice::Ske);
        g.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            let mut r = rng::master(5);
            b.iter(|| theta_simulate(x, &mut r).unwrap())
        });
    }
    g.finish();
}

fn semigroup(c: &mut Criterion) {
    let x = instance(8, MuChoice::Nod, NuChoice::Nod);
    let psi = default_suite().into_iter().find(|p| p.id == "pair_dist_n2").unwrap();
    c.bench_function("semigroup_exact/pair_dist_n2", |b| b.iter(|| semigroup_exact(black_box(&x), 0.5, &psi).unwrap()));
}

criterion_group!(benches, generation, pruning, cutdown, semigroup);
criterion_main!(benches);
