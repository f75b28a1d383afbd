//! End-to-end acceptance suite: one line per criterion, non-zero exit if
//! any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use optex_cli::commands::{oracle_report, sweep_report, SweepParam};
use optex_cli::RunConfig;
use optex_core::boundary::{solve_z, x_bar, x_star_bm};
use optex_core::sim::{dominance_against, path_payoffs, relative_shifts, simulate_stopping, stopping_reference};
use optex_core::specfun::exponent_n;
use optex_core::value::{hjb_residuals, smooth_fit, stopping_value, value, HjbTolerances};
use optex_core::{
    BoundaryGrid, BoundaryTable, GridSpec, ModelParams, Policy, QuadratureSpec, Region, SimConfig, Solution,
};

type Outcome = Result<String, String>;

struct Fixtures {
    ou: Solution,
    bm: Solution,
}

impl Fixtures {
    fn table(&self) -> &BoundaryTable {
        match &self.ou {
            Solution::Ou(o) => &o.table,
            Solution::Brownian(_) => unreachable!(),
        }
    }
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(20_240_601);
    r.set_stream(stream);
    r
}

/// Draw states with `y` in `(0, 4]` and `x` around the boundary until
/// `n` of them fall in `region`.
fn sample_region(sol: &Solution, region: Region, n: usize, stream: u64) -> Result<Vec<(f64, f64)>, String> {
    let mut r = rng(stream);
    let top = sol.depletion_level();
    let alpha = sol.params().alpha;
    let mut out = Vec::with_capacity(n);
    let mut draws = 0usize;
    while out.len() < n {
        draws += 1;
        if draws > 200 * n {
            return Err(format!("could not sample {n} {region:?} states"));
        }
        let y = r.random_range(0.01..4.0);
        let g = sol.boundary(y).map_err(|e| e.to_string())?;
        let x = match region {
            Region::Waiting => r.random_range(g - 3.0..g),
            Region::Sell2 => r.random_range(g..top + alpha * y),
            _ => r.random_range(top + alpha * y..top + alpha * y + 2.0),
        };
        if sol.classify(x, y).map_err(|e| e.to_string())? == region {
            out.push((x, y));
        }
    }
    Ok(out)
}

fn c1_brownian_closed_forms(_: &Fixtures) -> Outcome {
    let p = ModelParams::brownian_reference();
    let n = exponent_n(&p).map_err(|e| e.to_string())?;
    let x_star = x_star_bm(&p).map_err(|e| e.to_string())?;
    let err = (n - 0.625).abs().max((x_star - 1.9).abs());
    verdict(err <= 1e-12, format!("n = {n}, x* = {x_star}, max error {err:.1e}"))
}

fn c2_psi_ode(f: &Fixtures) -> Outcome {
    let Solution::Ou(o) = &f.ou else { unreachable!() };
    let p = *f.ou.params();
    let x0 = f.table().x0();
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let x = -2.0 + (x0 + 3.0) * i as f64 / 199.0;
        let e = o.psi().eval(x).map_err(|e| e.to_string())?;
        for k in 0..2 {
            worst = worst.max(e.ode_residual(&p, k).abs() / e.value(k));
        }
    }
    verdict(
        worst <= 1e-8,
        format!("max relative residual {worst:.2e} on 200 points"),
    )
}

fn c3_log_concavity_and_ordering(f: &Fixtures) -> Outcome {
    let Solution::Ou(o) = &f.ou else { unreachable!() };
    let p = *f.ou.params();
    let (x0, x_inf) = (f.table().x0(), f.table().x_inf());
    let mut min_w = f64::INFINITY;
    for i in 0..200 {
        let x = -2.0 + (x0 + 3.0) * i as f64 / 199.0;
        let e = o.psi().eval(x).map_err(|e| e.to_string())?;
        for k in 0..2 {
            min_w = min_w.min(e.wronskian_scaled(k));
        }
    }
    let xb = x_bar(&p);
    let exact = 41.0 / 110.0;
    let ok = min_w > 0.0 && p.c < x_inf && x_inf < x0 && xb < x0 && (xb - exact).abs() <= 1e-15;
    verdict(
        ok,
        format!(
            "min scaled Wronskian {min_w:.3e}; c = {} < x_inf = {x_inf:.10} < x0 = {x0:.10}; x_bar = {xb}",
            p.c
        ),
    )
}

fn c4_boundary_properties(f: &Fixtures) -> Outcome {
    let t = f.table();
    let (x0, x_inf) = (t.x0(), t.x_inf());
    let f_x0 = t.eval(x0).map_err(|e| e.to_string())?;
    let decreasing = t.values().windows(2).all(|w| w[1] < w[0]);
    let span = x0 - x_inf;
    let near = t.eval(x_inf + 1e-3 * span).map_err(|e| e.to_string())?;
    let mid = t.eval(x_inf + 0.5 * span).map_err(|e| e.to_string())?;
    let mut trip: f64 = 0.0;
    for i in 0..=77 {
        let y = 10f64.powf(-6.0 + 0.1 * i as f64);
        let g = t.inverse(y).map_err(|e| e.to_string())?;
        trip = trip.max((t.eval(g).map_err(|e| e.to_string())? - y).abs());
    }
    let ok = f_x0 == 0.0 && decreasing && near > 10.0 * mid && trip <= 1e-8;
    verdict(
        ok,
        format!(
            "F(x0) = {f_x0}, {} nodes decreasing: {decreasing}, F(near)/F(mid) = {:.2}, round trip {trip:.1e} on y in [1e-6, 10^1.7]",
            t.values().len(),
            near / mid
        ),
    )
}

fn c5_lump_equation(f: &Fixtures) -> Outcome {
    let t = f.table();
    let alpha = t.params().alpha;
    let states = sample_region(&f.ou, Region::Sell2, 1000, 5)?;
    let mut worst: f64 = 0.0;
    for &(x, y) in &states {
        let z = solve_z(x, y, t).map_err(|e| e.to_string())?;
        worst = worst.max((y - z - t.eval_extended(x - alpha * z)).abs());
    }
    let mut edge: f64 = 0.0;
    let mut r = rng(6);
    for _ in 0..100 {
        let x = r.random_range(t.x_inf() + 1e-3..t.x0());
        let y = t.eval(x).map_err(|e| e.to_string())?;
        edge = edge.max(solve_z(x, y, t).map_err(|e| e.to_string())?.abs());
        let x = t.x0() + r.random_range(1e-3..2.0);
        let y = (x - t.x0()) / alpha;
        edge = edge.max((solve_z(x, y, t).map_err(|e| e.to_string())? - y).abs());
    }
    verdict(
        worst <= 1e-9 && edge <= 1e-8,
        format!("residual {worst:.1e} on 1000 S2 states, edge cases {edge:.1e}"),
    )
}

fn c6_smooth_fit(f: &Fixtures) -> Outcome {
    let mut worst = [0.0f64; 2];
    for (k, sol) in [&f.ou, &f.bm].into_iter().enumerate() {
        for i in 1..=50 {
            let y = 0.08 * i as f64;
            let s = smooth_fit(y, sol, 1e-4).map_err(|e| e.to_string())?;
            worst[k] = worst[k].max(s.max_rel_jump);
        }
    }
    verdict(
        worst[0] <= 1e-4 && worst[1] <= 1e-4,
        format!(
            "max relative jump OU {:.1e}, Brownian {:.1e} at 50 points each",
            worst[0], worst[1]
        ),
    )
}

fn c7_hjb(f: &Fixtures) -> Outcome {
    let tol = HjbTolerances::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, sol, stream) in [("OU", &f.ou, 10), ("Brownian", &f.bm, 20)] {
        let mut states = Vec::new();
        for (k, region) in [Region::Waiting, Region::Sell1, Region::Sell2].into_iter().enumerate() {
            states.extend(sample_region(sol, region, 2000, stream + k as u64)?);
        }
        let r = hjb_residuals(&states, sol, &tol).map_err(|e| e.to_string())?;
        ok &= r.passed && r.max_waiting_slack < 0.0;
        lines.push(format!(
            "{name}: W residual {:.1e}, W slack max {:.1e}, S constraint {:.1e}, S generator max {:.1e}, {} failures",
            r.max_interior_residual, r.max_waiting_slack, r.max_selling_constraint, r.max_selling_generator, r.failures
        ));
    }
    verdict(ok, lines.join("; "))
}

/// Start states covering W, S1 and S2 for each branch.
const MC_STATES_OU: [(f64, f64); 5] = [(0.5, 1.0), (0.0, 2.0), (0.9, 0.3), (1.2, 2.0), (1.5, 0.5)];
const MC_STATES_BM: [(f64, f64); 5] = [(1.0, 5.0), (0.0, 1.0), (1.5, 2.0), (2.5, 5.0), (2.5, 1.0)];

struct McRun {
    branch: &'static str,
    x: f64,
    y: f64,
    region: Region,
    analytic: f64,
    payoffs: optex_core::sim::PathPayoffs,
}

fn mc_runs(f: &Fixtures) -> Result<Vec<McRun>, String> {
    let cfg = SimConfig::default();
    let mut runs = Vec::new();
    for (branch, sol, states) in [("OU", &f.ou, MC_STATES_OU), ("Brownian", &f.bm, MC_STATES_BM)] {
        for (x, y) in states {
            let payoffs =
                path_payoffs(x, y, sol, &cfg.with_policy(Policy::optimal_for(sol))).map_err(|e| e.to_string())?;
            runs.push(McRun {
                branch,
                x,
                y,
                region: sol.classify(x, y).map_err(|e| e.to_string())?,
                analytic: value(x, y, sol).map_err(|e| e.to_string())?.w,
                payoffs,
            });
        }
    }
    Ok(runs)
}

fn c8_monte_carlo(runs: &[McRun]) -> Outcome {
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for branch in ["OU", "Brownian"] {
        let regions: Vec<Region> = runs.iter().filter(|r| r.branch == branch).map(|r| r.region).collect();
        for want in [Region::Waiting, Region::Sell1, Region::Sell2] {
            ok &= regions.contains(&want);
        }
    }
    let mut lines = Vec::new();
    for r in runs {
        let res = &r.payoffs.result;
        let dev = (res.mean - r.analytic).abs();
        let tol = (2.0 * res.std_error).max(0.02 * r.analytic.abs());
        ok &= dev <= tol;
        worst = worst.max(dev / tol);
        lines.push(format!(
            "  {} ({}, {}) {:?}: mc {:.5} +- {:.1e}, w {:.5}",
            r.branch, r.x, r.y, r.region, res.mean, res.std_error, r.analytic
        ));
    }
    for l in &lines {
        println!("{l}");
    }
    verdict(
        ok,
        format!("{} states, worst deviation {:.2} of tolerance", runs.len(), worst),
    )
}

fn c9_dominance(f: &Fixtures, runs: &[McRun]) -> Outcome {
    let cfg = SimConfig::default();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    for r in runs {
        let sol = if r.branch == "OU" { &f.ou } else { &f.bm };
        let report =
            dominance_against(&r.payoffs, sol, &cfg, &relative_shifts(sol, 0.05)).map_err(|e| e.to_string())?;
        ok &= report.passed;
        for row in &report.rows {
            let z = if row.paired_se > 0.0 {
                row.advantage / row.paired_se
            } else if row.advantage >= 0.0 {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
            worst = worst.min(z);
        }
    }
    verdict(
        ok,
        format!(
            "{} states x 3 alternatives, smallest optimal advantage {worst:.2} paired SE",
            runs.len()
        ),
    )
}

fn c10_oracle(_: &Fixtures) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for (name, model) in [
        ("OU", ModelParams::mean_reverting_reference()),
        ("Brownian", ModelParams::brownian_reference()),
    ] {
        let cfg = RunConfig {
            model,
            grid: Some(GridSpec::default()),
            ..RunConfig::default()
        };
        let (report, _) = oracle_report(&cfg, 3).map_err(|e| e.to_string())?;
        ok &= report.passed;
        let sup: Vec<String> = report.levels.iter().map(|l| format!("{:.2e}", l.sup_rel)).collect();
        let top = report.levels.last().expect("three levels");
        lines.push(format!(
            "{name}: sup rel [{}] (tol {}), envelope {:.2} cells",
            sup.join(" > "),
            report.tolerance,
            top.envelope_cells
        ));
    }
    verdict(ok, lines.join("; "))
}

fn c11_comparative_statics(_: &Fixtures) -> Outcome {
    let base = RunConfig::default();
    let mut ok = true;
    let mut failed = Vec::new();
    for (param, values) in [
        (SweepParam::A, [0.4, 0.5, 0.6, 0.7]),
        (SweepParam::Sigma, [0.8, 0.9, 1.0, 1.1]),
        (SweepParam::B, [1.0, 0.25, 0.125, 0.05]),
    ] {
        let (report, _) = sweep_report(&base, param, &values).map_err(|e| e.to_string())?;
        ok &= report.passed;
        failed.extend(
            report
                .checks
                .iter()
                .filter(|c| !c.holds)
                .map(|c| format!("{}: {}", param.name(), c.name)),
        );
    }
    let detail = if failed.is_empty() {
        "a, sigma and b sweeps: all orderings hold".to_string()
    } else {
        format!("failed: {}", failed.join(", "))
    };
    verdict(ok, detail)
}

fn c12_stopping(f: &Fixtures) -> Outcome {
    let mut spread: f64 = 0.0;
    for i in 0..40 {
        let x = -0.5 + 0.075 * i as f64;
        let u0 = stopping_value(x, 0.1, &f.bm).map_err(|e| e.to_string())?.u;
        for y in [0.3, 1.0, 2.5, 5.0] {
            spread = spread.max((stopping_value(x, y, &f.bm).map_err(|e| e.to_string())?.u - u0).abs());
        }
    }
    let cfg = SimConfig::default();
    let mut ok = spread <= 1e-10;
    let mut worst: f64 = 0.0;
    for (x, y) in [(0.2, 0.2), (0.3, 0.5), (0.4, 1.0), (0.5, 2.0), (0.6, 4.0)] {
        let r = simulate_stopping(x, y, &f.ou, &cfg).map_err(|e| e.to_string())?;
        let u = stopping_reference(x, y, &f.ou).map_err(|e| e.to_string())?;
        let z = (r.mean - u).abs() / r.std_error;
        ok &= z <= 2.0;
        worst = worst.max(z);
        println!("  OU ({x}, {y}): mc {:.5} +- {:.1e}, u {u:.5}", r.mean, r.std_error);
    }
    verdict(
        ok,
        format!("Brownian u spread over y {spread:.1e}; OU stopping MC worst {worst:.2} SE at 5 states"),
    )
}

fn main() {
    let start = Instant::now();
    let grid = BoundaryGrid::default();
    let quad = QuadratureSpec::default();
    let fixtures = Fixtures {
        ou: Solution::solve(&ModelParams::mean_reverting_reference(), &quad, &grid)
            .expect("mean-reverting instance solves"),
        bm: Solution::solve(&ModelParams::brownian_reference(), &quad, &grid).expect("Brownian instance solves"),
    };

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, out: Outcome| {
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "[{tag}] {id:>2} {name}: {detail} ({:.0} s)",
            start.elapsed().as_secs_f64()
        );
        results.push((id, name, out));
    };

    run(1, "Brownian closed forms", c1_brownian_closed_forms(&fixtures));
    run(2, "psi ODE residuals", c2_psi_ode(&fixtures));
    run(
        3,
        "log-concavity and critical price ordering",
        c3_log_concavity_and_ordering(&fixtures),
    );
    run(4, "free boundary properties", c4_boundary_properties(&fixtures));
    run(5, "lump-sum equation", c5_lump_equation(&fixtures));
    run(6, "smooth fit", c6_smooth_fit(&fixtures));
    run(7, "HJB suite", c7_hjb(&fixtures));
    run(10, "QVI oracle", c10_oracle(&fixtures));
    run(11, "comparative statics", c11_comparative_statics(&fixtures));
    match mc_runs(&fixtures) {
        Ok(runs) => {
            run(8, "Monte Carlo vs analytic value", c8_monte_carlo(&runs));
            run(9, "policy dominance", c9_dominance(&fixtures, &runs));
        }
        Err(e) => {
            run(8, "Monte Carlo vs analytic value", Err(e.clone()));
            run(9, "policy dominance", Err(e));
        }
    }
    run(12, "stopping representation", c12_stopping(&fixtures));

    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
