use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use probode::harness::{run_solver, SolverId};
use probode::problems;
use probode::rk::Tableau;
use probode::{equispaced_targets, Factorization};

fn logistic(c: &mut Criterion) {
    let bp = problems::logistic();
    let targets = equispaced_targets(&bp.problem, 5);
    let mut group = c.benchmark_group("logistic");
    for tol in [1e-4, 1e-8] {
        let cfg = bp.config().with_tolerances(tol, tol * 1e-3);
        for solver in [SolverId::Ats, SolverId::AsOracle, SolverId::Rk(Tableau::Dopri5)] {
            group.bench_with_input(BenchmarkId::new(solver.id(), tol), &cfg, |b, cfg| {
                b.iter(|| run_solver(&bp, solver, cfg, &targets).unwrap())
            });
        }
    }
    group.finish();
}

fn three_body(c: &mut Criterion) {
    let bp = problems::three_body();
    let targets = equispaced_targets(&bp.problem, 50);
    let cfg = bp.config().with_tolerances(1e-6, 1e-9);
    let mut group = c.benchmark_group("three-body");
    group.sample_size(10);
    for solver in [SolverId::Ats, SolverId::AsOracle] {
        group.bench_function(solver.id(), |b| {
            b.iter(|| run_solver(&bp, solver, &cfg, &targets).unwrap())
        });
    }
    group.finish();
}

fn brusselator(c: &mut Criterion) {
    let mut group = c.benchmark_group("brusselator");
    group.sample_size(10);
    for d in [8, 16] {
        let bp = problems::brusselator(d).unwrap();
        let targets = equispaced_targets(&bp.problem, 20);
        let cfg = bp
            .config()
            .with_factorization(Factorization::Isotropic)
            .with_tolerances(1e-6, 1e-9);
        group.bench_with_input(BenchmarkId::new("ats", d), &cfg, |b, cfg| {
            b.iter(|| run_solver(&bp, SolverId::Ats, cfg, &targets).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, logistic, three_body, brusselator);
criterion_main!(benches);
