use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use weakcalc::dirichlet::Dirichlet;
use weakcalc::exterior::{self, CochainAssembly};
use weakcalc::hessian::HessianOperator;
use weakcalc::lagrangian::{self, TransportOptions};
use weakcalc::suite::{self, Calculus};
use weakcalc::bank::{BankConfig, TestFunctionBank};
use weakcalc::DiscreteSpace;

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly");
    for n in [16, 32] {
        let space = DiscreteSpace::build(&format!("flat_torus:n={n}")).unwrap();
        g.bench_with_input(BenchmarkId::new("dirichlet", n), &space, |b, s| b.iter(|| Dirichlet::new(black_box(s)).unwrap()));
        let d = Dirichlet::new(&space).unwrap();
        let bank = TestFunctionBank::new(&space, &d, BankConfig::default()).unwrap();
        g.bench_with_input(BenchmarkId::new("hessian", n), &space, |b, s| b.iter(|| HessianOperator::new(black_box(s), &d, &bank).unwrap()));
        g.bench_with_input(BenchmarkId::new("cochains", n), &space, |b, s| b.iter(|| CochainAssembly::new(black_box(s)).unwrap()));
    }
    g.finish();
}

fn flows(c: &mut Criterion) {
    let calc = Calculus::build("flat_torus:n=16", None, 42).unwrap();
    let f = &calc.bank.scalars[0];
    let x = &calc.bank.vectors[0];
    let w = calc.vector_form(0);
    c.bench_function("heat_flow/t=0.1", |b| b.iter(|| calc.dirichlet.heat_flow(black_box(f), 0.1).unwrap()));
    c.bench_function("gamma2", |b| b.iter(|| calc.dirichlet.gamma2(&calc.space, black_box(f), f)));
    c.bench_function("connection_heat_flow/t=0.1", |b| b.iter(|| calc.covariant.heat_flow(black_box(x), 0.1).unwrap()));
    c.bench_function("hodge_heat_flow/t=0.1", |b| b.iter(|| calc.complex.hodge_heat_flow(black_box(&w), 0.1).unwrap()));
    c.bench_function("ricci_measure", |b| b.iter(|| calc.ricci().ricci_measure(black_box(x), x).unwrap()));
}

fn topology(c: &mut Criterion) {
    let mut g = c.benchmark_group("betti");
    for desc in ["flat_torus:n=16", "icosphere:subdiv=3"] {
        let space = DiscreteSpace::build(desc).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(desc), &space, |b, s| b.iter(|| exterior::betti(black_box(s)).unwrap()));
    }
    g.finish();
}

fn transport(c: &mut Criterion) {
    let calc = Calculus::build("flat_torus:n=8", None, 42).unwrap();
    let (a, b) = suite::transport_blobs(&calc.space).unwrap();
    let mut g = c.benchmark_group("transport");
    g.sample_size(10);
    g.bench_function("assignment_lp", |bench| bench.iter(|| lagrangian::transport_lp(&calc.space, black_box(&a), &b).unwrap()));
    let opts = TransportOptions { max_iter: 500, ..TransportOptions::default() };
    g.bench_function("dynamic/500_iterations", |bench| {
        bench.iter(|| lagrangian::benamou_brenier(&calc.space, &calc.dirichlet, black_box(&a), &b, opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, assembly, flows, topology, transport);
criterion_main!(benches);
