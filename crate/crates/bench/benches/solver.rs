use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use optex_bench::{brownian, ou};
use optex_core::boundary::critical_prices;
use optex_core::oracle::solve_qvi;
use optex_core::sim::simulate_payoff;
use optex_core::value::value;
use optex_core::{BoundaryGrid, BoundaryTable, GridSpec, ModelParams, OuPsi, QuadratureSpec, SimConfig};

fn psi(c: &mut Criterion) {
    let psi = OuPsi::new(&ModelParams::mean_reverting_reference(), &QuadratureSpec::default()).unwrap();
    c.bench_function("psi_eval", |b| b.iter(|| psi.eval(black_box(0.7)).unwrap()));
}

fn boundary(c: &mut Criterion) {
    let p = ModelParams::mean_reverting_reference();
    let q = QuadratureSpec::default();
    c.bench_function("critical_prices", |b| {
        b.iter(|| critical_prices(black_box(&p), &q).unwrap())
    });
    let mut g = c.benchmark_group("table");
    g.sample_size(10);
    g.bench_function("build", |b| {
        b.iter(|| BoundaryTable::build(black_box(&p), &q, &BoundaryGrid::default()).unwrap())
    });
    g.finish();
    let sol = ou();
    let sol_ref = &sol;
    c.bench_function("value_ou", |b| {
        b.iter(|| value(black_box(1.05), black_box(1.5), sol_ref).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let sol = ou();
    let cfg = SimConfig {
        n_paths: 200,
        ..SimConfig::default()
    };
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("ou_200_paths", |b| {
        b.iter(|| simulate_payoff(black_box(0.5), 1.0, &sol, &cfg).unwrap())
    });
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle");
    g.sample_size(10);
    for (name, sol) in [("ou", ou()), ("brownian", brownian())] {
        let spec = GridSpec::default().with_size(200, 30);
        g.bench_function(name, |b| b.iter(|| solve_qvi(black_box(&sol), &spec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, psi, boundary, simulation, oracle);
criterion_main!(benches);
