//! Monte Carlo estimates of the discounted extraction payoff under the
//! optimal reflected policy and under perturbed policies.
//!
//! Every path owns a ChaCha8 stream selected by `(base_seed, path_index)`,
//! paths are collected in index order and summed pairwise, so results are
//! bit-identical for any number of worker threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryTable, Region, Solution};
use crate::error::{Error, Result};
use crate::params::{Branch, ModelParams};
use crate::specfun::PsiGrid;
use crate::value::{growth_constant, stopping_value};

/// Largest `n_paths` accepted by [`trace_paths`].
pub const MAX_TRACE_PATHS: usize = 100;

/// `-zeta(1/2) / sqrt(2 pi)`: a boundary checked only every `h` acts like
/// one placed `beta sigma sqrt(h)` higher under continuous monitoring.
pub const MONITORING_BETA: f64 = 0.582_597_157_939_010_6;

/// Extraction rule followed by the simulated extractor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// The optimal rule of whichever branch was solved.
    Optimal,
    /// Reflect at `F^{-1}(Y)` (mean-reverting branch).
    OptimalOu,
    /// Reflect at the constant level `x*` (Brownian branch).
    OptimalBm,
    /// The optimal boundary of the solved branch moved right by `dx`.
    ShiftedBoundary(f64),
    NoExtraction,
    /// Sell the whole reserve at time zero.
    ImmediateDepletion,
}

impl Policy {
    pub fn optimal_for(sol: &Solution) -> Policy {
        match sol {
            Solution::Brownian(_) => Policy::OptimalBm,
            Solution::Ou(_) => Policy::OptimalOu,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Policy::Optimal => "optimal".into(),
            Policy::OptimalOu => "optimal_ou".into(),
            Policy::OptimalBm => "optimal_bm".into(),
            Policy::ShiftedBoundary(dx) => format!("shifted_boundary({dx})"),
            Policy::NoExtraction => "no_extraction".into(),
            Policy::ImmediateDepletion => "immediate_depletion".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub h: f64,
    /// Truncation time; `None` means `10 / rho`.
    pub horizon: Option<f64>,
    pub n_paths: usize,
    pub base_seed: u64,
    pub policy: Policy,
    /// Lower every selling boundary by `MONITORING_BETA sigma sqrt(h)` to
    /// offset the overshoot between monitoring dates.
    pub continuity_correction: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            h: 1e-3,
            horizon: None,
            n_paths: 100_000,
            base_seed: 20_240_601,
            policy: Policy::Optimal,
            continuity_correction: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("sim.h must be positive, got {}", self.h)));
        }
        if let Some(t) = self.horizon {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::Config(format!("sim.horizon must be positive, got {t}")));
            }
        }
        if self.n_paths == 0 {
            return Err(Error::Config("sim.n_paths must be at least 1".into()));
        }
        if let Policy::ShiftedBoundary(dx) = self.policy {
            if !dx.is_finite() {
                return Err(Error::Config("boundary shift must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn horizon_for(&self, p: &ModelParams) -> f64 {
        self.horizon.unwrap_or(10.0 / p.rho)
    }

    pub fn with_policy(&self, policy: Policy) -> Self {
        SimConfig { policy, ..*self }
    }

    /// Amount by which simulated boundaries are lowered.
    pub fn boundary_offset(&self, p: &ModelParams) -> f64 {
        if self.continuity_correction {
            MONITORING_BETA * p.sigma * self.h.sqrt()
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub policy: Policy,
    pub x: f64,
    pub y: f64,
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub h: f64,
    pub horizon: f64,
    /// Lump extracted at time zero.
    pub initial_jump: f64,
    /// Fraction of paths whose reserve is exhausted by the horizon.
    pub depleted_fraction: f64,
    /// Bound on the discounted value left after the horizon.
    pub tail_bound: f64,
}

/// Per-path payoffs behind a [`SimResult`], kept for paired comparisons.
#[derive(Debug, Clone)]
pub struct PathPayoffs {
    pub result: SimResult,
    pub payoffs: Vec<f64>,
}

/// Lump extracted at time zero by the optimal policy:
/// 0 on `W`, `y` on `S1`, `z(x, y)` on `S2`.
pub fn initial_jump(x: f64, y: f64, sol: &Solution) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(Error::Domain(format!("reserve must be >= 0, got {y}")));
    }
    match sol.classify(x, y)? {
        Region::Waiting | Region::Boundary => Ok(0.0),
        Region::Sell1 => Ok(y),
        Region::Sell2 => sol.solve_z(x, y),
    }
}

/// Cumulative extraction `xi_t = y ^ sup_{s<=t} (X^0_s - threshold)^+ / alpha`
/// along the uncontrolled Brownian price `X^0_t = x + a t + sigma W_t`,
/// sampled at `t = 0, h, 2h, ...`. `increments` are the `W` increments.
pub fn running_max_policy_bm(x: f64, y: f64, threshold: f64, p: &ModelParams, h: f64, increments: &[f64]) -> Vec<f64> {
    let mut rm = RunningMax::new(x, y, threshold, p.alpha);
    let mut price = x;
    let mut out = Vec::with_capacity(increments.len() + 1);
    out.push(rm.xi);
    for dw in increments {
        price += p.a * h + p.sigma * dw;
        out.push(rm.update(price));
    }
    out
}

struct RunningMax {
    y: f64,
    threshold: f64,
    alpha: f64,
    max: f64,
    xi: f64,
}

impl RunningMax {
    fn new(x: f64, y: f64, threshold: f64, alpha: f64) -> Self {
        let mut rm = RunningMax {
            y,
            threshold,
            alpha,
            max: f64::NEG_INFINITY,
            xi: 0.0,
        };
        rm.update(x);
        rm
    }

    fn update(&mut self, price: f64) -> f64 {
        if price > self.max {
            self.max = price;
            self.xi = self.y.min(((self.max - self.threshold) / self.alpha).max(0.0));
        }
        self.xi
    }
}

/// Pairwise sum, independent of how the terms were produced.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    if v.iter().all(|&p| p == v[0]) {
        return (v[0], 0.0);
    }
    let n = v.len() as f64;
    let mean = pairwise_sum(v) / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = v.iter().map(|p| (p - mean) * (p - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn path_rng(base_seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(path);
    rng
}

/// Boundary rule for the mean-reverting branch: sell when the price
/// exceeds `G(Y) + dx`.
struct Reflector<'a> {
    table: &'a BoundaryTable,
    dx: f64,
    alpha: f64,
}

impl Reflector<'_> {
    fn boundary(&self, y: f64) -> Result<f64> {
        Ok(self.table.inverse(y)? + self.dx)
    }

    /// `F(u - dx)` and its slope, with `F = 0` above `x0`.
    fn f_shifted(&self, u: f64) -> (f64, f64) {
        let v = u - self.dx;
        if v >= self.table.x0() {
            (0.0, 0.0)
        } else {
            self.table.eval_with_slope(v)
        }
    }

    /// Push `(x, y)` along `(-alpha, -1)` back onto the boundary. `b` is a
    /// point on the boundary at or below the root, normally the boundary at
    /// the current reserve. Returns the new price and the amount sold.
    fn solve_back(&self, x: f64, y: f64, b: f64) -> (f64, f64) {
        let alpha = self.alpha;
        if x - alpha * y - self.dx >= self.table.x0() {
            return (x - alpha * y, y);
        }
        // g(u) = u - x + alpha y - alpha F(u - dx), increasing in u
        let g = |u: f64| {
            let (f, fp) = self.f_shifted(u);
            (u - x + alpha * y - alpha * f, 1.0 - alpha * fp)
        };
        let floor = self.table.x_inf() + self.dx;
        let mut lo = b.max(x - alpha * y).max(floor + 1e-15 * (1.0 + floor.abs()));
        let mut hi = x;
        let mut u = lo;
        for _ in 0..60 {
            let (gu, dg) = g(u);
            if gu == 0.0 {
                break;
            }
            if gu < 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            let mut next = u - gu / dg;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - u).abs() <= 1e-14 * (1.0 + u.abs()) {
                u = next;
                break;
            }
            u = next;
        }
        let sold = ((x - u) / alpha).clamp(0.0, y);
        (u, sold)
    }
}

enum Rule<'a> {
    Reflect(Reflector<'a>),
    RunningMax { threshold: f64 },
    Static,
}

/// State after the time-zero action, shared by every path.
#[derive(Debug, Clone, Copy)]
struct Start {
    x: f64,
    y: f64,
    boundary: f64,
    payoff: f64,
    jump: f64,
}

struct Engine<'a> {
    p: ModelParams,
    rule: Rule<'a>,
    start: Start,
    x_init: f64,
    y_init: f64,
    steps: usize,
    h: f64,
    base_seed: u64,
}

struct PathEnd {
    payoff: f64,
    x: f64,
    y: f64,
}

fn lump_payoff(p: &ModelParams, x: f64, dxi: f64) -> f64 {
    (x - p.c) * dxi - 0.5 * p.alpha * dxi * dxi
}

impl<'a> Engine<'a> {
    fn new(x: f64, y: f64, sol: &'a Solution, cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        if !(y >= 0.0) || !y.is_finite() || !x.is_finite() {
            return Err(Error::Domain(format!("start state ({x}, {y}) is not admissible")));
        }
        let p = *sol.params();
        let dx = match (cfg.policy, sol) {
            (Policy::Optimal, _)
            | (Policy::OptimalOu, Solution::Ou(_))
            | (Policy::OptimalBm, Solution::Brownian(_)) => Some(0.0),
            (Policy::OptimalOu, _) | (Policy::OptimalBm, _) => {
                return Err(Error::Config(format!(
                    "policy {} does not match the {:?} branch",
                    cfg.policy.label(),
                    p.branch()
                )))
            }
            (Policy::ShiftedBoundary(dx), _) => Some(dx),
            _ => None,
        }
        .map(|dx| dx - cfg.boundary_offset(&p));
        let rule = match (dx, sol) {
            (Some(dx), Solution::Ou(o)) => Rule::Reflect(Reflector {
                table: &o.table,
                dx,
                alpha: p.alpha,
            }),
            (Some(dx), Solution::Brownian(b)) => Rule::RunningMax {
                threshold: b.x_star + dx,
            },
            (None, _) => Rule::Static,
        };
        let (sx, sy, boundary, jump) = match (&rule, cfg.policy) {
            _ if y == 0.0 => (x, 0.0, f64::INFINITY, 0.0),
            (Rule::Static, Policy::ImmediateDepletion) => (x - p.alpha * y, 0.0, f64::INFINITY, y),
            (Rule::Static, _) => (x, y, f64::INFINITY, 0.0),
            (Rule::Reflect(r), _) => {
                let b = r.boundary(y)?;
                if x > b {
                    let (u, sold) = r.solve_back(x, y, b);
                    let rest = y - sold;
                    let nb = if rest > 0.0 { r.boundary(rest)? } else { f64::INFINITY };
                    (u, rest, nb, sold)
                } else {
                    (x, y, b, 0.0)
                }
            }
            (Rule::RunningMax { threshold }, _) => {
                let rm = RunningMax::new(x, y, *threshold, p.alpha);
                (x - p.alpha * rm.xi, y - rm.xi, *threshold, rm.xi)
            }
        };
        let steps = (cfg.horizon_for(&p) / cfg.h).ceil() as usize;
        Ok(Engine {
            p,
            rule,
            start: Start {
                x: sx,
                y: sy,
                boundary,
                payoff: lump_payoff(&p, x, jump),
                jump,
            },
            x_init: x,
            y_init: y,
            steps,
            h: cfg.h,
            base_seed: cfg.base_seed,
        })
    }

    fn is_static(&self) -> bool {
        matches!(self.rule, Rule::Static) || self.start.y == 0.0
    }

    /// Simulate one path; `obs(t, X, Y, xi)` sees every step.
    fn run<O: FnMut(f64, f64, f64, f64)>(&self, path: u64, obs: &mut O) -> Result<PathEnd> {
        let p = &self.p;
        let s = self.start;
        obs(0.0, s.x, s.y, self.y_init - s.y);
        if self.is_static() {
            return Ok(PathEnd {
                payoff: s.payoff,
                x: s.x,
                y: s.y,
            });
        }
        let mut rng = path_rng(self.base_seed, path);
        let h = self.h;
        let sh = p.sigma * h.sqrt();
        let decay = (-p.rho * h).exp();
        let mut payoff = s.payoff;
        match &self.rule {
            Rule::Reflect(r) => {
                let (mut x, mut y, mut b) = (s.x, s.y, s.boundary);
                let mut disc = 1.0;
                for i in 1..=self.steps {
                    let z: f64 = rng.sample(StandardNormal);
                    x += (p.a - p.b * x) * h + sh * z;
                    disc *= decay;
                    if x > b {
                        let (u, sold) = r.solve_back(x, y, b);
                        payoff += disc * lump_payoff(p, x, sold);
                        x = u;
                        y -= sold;
                        if y <= 0.0 {
                            y = 0.0;
                            obs(i as f64 * h, x, y, self.y_init);
                            break;
                        }
                        b = u;
                    }
                    obs(i as f64 * h, x, y, self.y_init - y);
                }
                Ok(PathEnd { payoff, x, y })
            }
            Rule::RunningMax { threshold } => {
                let mut rm = RunningMax::new(self.x_init, self.y_init, *threshold, p.alpha);
                let mut free = self.x_init;
                let mut xi = rm.xi;
                let mut disc = 1.0;
                for i in 1..=self.steps {
                    let z: f64 = rng.sample(StandardNormal);
                    free += p.a * h + sh * z;
                    disc *= decay;
                    let next = rm.update(free);
                    if next > xi {
                        payoff += disc * lump_payoff(p, free - p.alpha * xi, next - xi);
                        xi = next;
                    }
                    obs(i as f64 * h, free - p.alpha * xi, self.y_init - xi, xi);
                    if xi >= self.y_init {
                        break;
                    }
                }
                Ok(PathEnd {
                    payoff,
                    x: free - p.alpha * xi,
                    y: self.y_init - xi,
                })
            }
            Rule::Static => unreachable!(),
        }
    }
}

/// `max w / (y (1 + y)(1 + |x|))` over a fixed reference grid around the
/// boundary.
fn reference_growth_constant(sol: &Solution) -> Result<f64> {
    let top = sol.depletion_level();
    let mut states = Vec::new();
    for i in 0..=20 {
        let x = top - 3.0 + 4.0 * i as f64 / 20.0;
        for j in 1..=10 {
            states.push((x, 0.5 * j as f64));
        }
    }
    growth_constant(&states, sol)
}

/// Per-path discounted payoffs for the policy in `cfg` from `(x, y)`.
pub fn path_payoffs(x: f64, y: f64, sol: &Solution, cfg: &SimConfig) -> Result<PathPayoffs> {
    let engine = Engine::new(x, y, sol, cfg)?;
    let horizon = cfg.horizon_for(sol.params());
    let n = cfg.n_paths;
    let ends: Vec<PathEnd> = if engine.is_static() {
        let end = engine.run(0, &mut |_, _, _, _| {})?;
        (0..n)
            .map(|_| PathEnd {
                payoff: end.payoff,
                x: end.x,
                y: end.y,
            })
            .collect()
    } else {
        (0..n as u64)
            .into_par_iter()
            .map(|path| engine.run(path, &mut |_, _, _, _| {}))
            .collect::<Result<_>>()?
    };
    let payoffs: Vec<f64> = ends.iter().map(|e| e.payoff).collect();
    let (mean, std_error) = mean_and_se(&payoffs);
    if !mean.is_finite() {
        return Err(Error::numeric("sim", "non-finite payoff estimate"));
    }
    let depleted = ends.iter().filter(|e| e.y <= 0.0).count();
    let growth: Vec<f64> = ends.iter().map(|e| e.y * (1.0 + e.y) * (1.0 + e.x.abs())).collect();
    let tail_bound = if depleted == n {
        0.0
    } else {
        (-sol.params().rho * horizon).exp() * reference_growth_constant(sol)? * pairwise_sum(&growth) / n as f64
    };
    Ok(PathPayoffs {
        result: SimResult {
            policy: cfg.policy,
            x,
            y,
            mean,
            std_error,
            n_paths: n,
            h: cfg.h,
            horizon,
            initial_jump: engine.start.jump,
            depleted_fraction: depleted as f64 / n as f64,
            tail_bound,
        },
        payoffs,
    })
}

/// Monte Carlo estimate of the discounted payoff of `cfg.policy` from `(x, y)`.
pub fn simulate_payoff(x: f64, y: f64, sol: &Solution, cfg: &SimConfig) -> Result<SimResult> {
    Ok(path_payoffs(x, y, sol, cfg)?.result)
}

/// Write `path,t,X,Y,xi` rows for every step of every path.
pub fn trace_paths<W: Write>(x: f64, y: f64, sol: &Solution, cfg: &SimConfig, out: W) -> Result<()> {
    if cfg.n_paths > MAX_TRACE_PATHS {
        return Err(Error::Config(format!(
            "path traces are limited to {MAX_TRACE_PATHS} paths, got {}",
            cfg.n_paths
        )));
    }
    let engine = Engine::new(x, y, sol, cfg)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "t", "X", "Y", "xi"]).map_err(csv_err)?;
    for path in 0..cfg.n_paths as u64 {
        let mut rows = Vec::new();
        engine.run(path, &mut |t, x, y, xi| rows.push([t, x, y, xi]))?;
        for r in rows {
            w.write_record(&[
                path.to_string(),
                r[0].to_string(),
                r[1].to_string(),
                r[2].to_string(),
                r[3].to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::numeric("sim", e.to_string()))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::numeric("sim", e.to_string())
}

/// Boundary shifts of `+-fraction` of the branch's natural price scale:
/// `x0 - x_inf` (mean-reverting) or `x* - c` (Brownian).
pub fn relative_shifts(sol: &Solution, fraction: f64) -> [f64; 2] {
    let scale = match sol {
        Solution::Ou(o) => o.table.x0() - o.table.x_inf(),
        Solution::Brownian(b) => b.x_star - b.params.c,
    };
    [fraction * scale, -fraction * scale]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceRow {
    pub policy: Policy,
    pub mean: f64,
    pub std_error: f64,
    /// Mean of `optimal - perturbed` over paired paths.
    pub advantage: f64,
    pub paired_se: f64,
    /// The perturbed policy does not beat the optimum beyond `2 paired_se`.
    pub dominated: bool,
    /// The optimum is ahead by more than `2 paired_se`.
    pub strictly_worse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub x: f64,
    pub y: f64,
    pub optimal: SimResult,
    pub rows: Vec<DominanceRow>,
    pub passed: bool,
}

/// Compare perturbed policies against precomputed optimal payoffs on the
/// same path streams.
pub fn dominance_against(
    optimal: &PathPayoffs,
    sol: &Solution,
    cfg: &SimConfig,
    perturbations: &[f64],
) -> Result<DominanceReport> {
    if perturbations.iter().any(|&d| d == 0.0 || !d.is_finite()) {
        return Err(Error::Config(
            "boundary perturbations must be finite and nonzero".into(),
        ));
    }
    let (x, y) = (optimal.result.x, optimal.result.y);
    let mut policies: Vec<Policy> = perturbations.iter().map(|&d| Policy::ShiftedBoundary(d)).collect();
    policies.push(Policy::ImmediateDepletion);
    let mut rows = Vec::with_capacity(policies.len());
    for policy in policies {
        let run = path_payoffs(x, y, sol, &cfg.with_policy(policy))?;
        let diff: Vec<f64> = optimal.payoffs.iter().zip(&run.payoffs).map(|(o, q)| o - q).collect();
        let (advantage, paired_se) = mean_and_se(&diff);
        rows.push(DominanceRow {
            policy,
            mean: run.result.mean,
            std_error: run.result.std_error,
            advantage,
            paired_se,
            dominated: advantage >= -2.0 * paired_se,
            strictly_worse: advantage > 2.0 * paired_se,
        });
    }
    let passed = rows.iter().all(|r| r.dominated);
    Ok(DominanceReport {
        x,
        y,
        optimal: optimal.result.clone(),
        rows,
        passed,
    })
}

/// Paired-seed comparison of the optimal policy against shifted boundaries
/// and immediate depletion.
pub fn dominance_test(
    x: f64,
    y: f64,
    sol: &Solution,
    cfg: &SimConfig,
    perturbations: &[f64],
) -> Result<DominanceReport> {
    let optimal = path_payoffs(x, y, sol, &cfg.with_policy(Policy::optimal_for(sol)))?;
    dominance_against(&optimal, sol, cfg, perturbations)
}

/// Monte Carlo value of the stopping problem with fixed reserve `y`:
/// stop at the first hit of `G(y)` (or `x*`), collect `X - c`, and pay
/// the running cost `alpha b A(y) psi'(X)` until then.
///
/// The price is advanced with the exact Gaussian transition and crossings
/// between grid times are detected with the Brownian-bridge probability.
pub fn simulate_stopping(x: f64, y: f64, sol: &Solution, cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    if !(y > 0.0) {
        return Err(Error::Domain(format!("stopping needs y > 0, got {y}")));
    }
    let p = *sol.params();
    let level = sol.boundary(y)?;
    let horizon = cfg.horizon_for(&p);
    let n = cfg.n_paths;
    let base = |mean: f64, std_error: f64, tail_bound: f64| SimResult {
        policy: Policy::optimal_for(sol),
        x,
        y,
        mean,
        std_error,
        n_paths: n,
        h: cfg.h,
        horizon,
        initial_jump: 0.0,
        depleted_fraction: 0.0,
        tail_bound,
    };
    if x >= level {
        return Ok(base(x - p.c, 0.0, 0.0));
    }
    let h = cfg.h;
    let (mean_factor, shift, sd) = match p.branch() {
        Branch::Brownian => (1.0, p.a * h, p.sigma * h.sqrt()),
        Branch::OrnsteinUhlenbeck => {
            let e = (-p.b * h).exp();
            (e, p.a / p.b * (1.0 - e), p.sigma * ((1.0 - e * e) / (2.0 * p.b)).sqrt())
        }
    };
    // running cost, tabulated on the range the paths can plausibly visit
    let cost = match sol {
        Solution::Brownian(_) => None,
        Solution::Ou(o) => {
            let a_y = crate::value::coeff_a(y, sol)?;
            let spread = p.sigma / (2.0 * p.b).sqrt();
            let lo = x.min(p.a / p.b) - 10.0 * spread;
            let nodes = ((level - lo) / 2e-3).ceil() as usize + 2;
            let grid = PsiGrid::new(o.psi(), lo, level, nodes)?;
            Some((p.alpha * p.b * a_y, grid, o.psi()))
        }
    };
    let running = |z: f64| -> Result<f64> {
        match &cost {
            None => Ok(0.0),
            Some((k, grid, psi)) => match grid.eval(z, 1) {
                Some(v) => Ok(k * v),
                None => Ok(k * psi.psi_k(z, 1)?),
            },
        }
    };
    let steps = (horizon / h).ceil() as usize;
    let decay = (-p.rho * h).exp();
    let bridge_scale = 2.0 / (p.sigma * p.sigma * h);
    let run = |path: u64| -> Result<(f64, bool)> {
        let mut rng = path_rng(cfg.base_seed, path);
        let mut xc = x;
        let mut disc = 1.0;
        let mut f_prev = running(xc)?;
        let mut total = 0.0;
        for _ in 0..steps {
            let z: f64 = rng.sample(StandardNormal);
            let xn = mean_factor * xc + shift + sd * z;
            let next_disc = disc * decay;
            let crossed = if xn >= level {
                true
            } else {
                let gap = (level - xc) * (level - xn) * bridge_scale;
                gap < 40.0 && rng.random::<f64>() < (-gap).exp()
            };
            if crossed {
                // running cost up to the hit, approximated by half a step
                total -= 0.5 * h * disc * f_prev;
                total += next_disc * (level - p.c);
                return Ok((total, true));
            }
            let f_next = running(xn)?;
            total -= 0.5 * h * (disc * f_prev + next_disc * f_next);
            xc = xn;
            disc = next_disc;
            f_prev = f_next;
        }
        Ok((total, false))
    };
    let out: Vec<(f64, bool)> = (0..n as u64).into_par_iter().map(run).collect::<Result<_>>()?;
    let payoffs: Vec<f64> = out.iter().map(|o| o.0).collect();
    let (mean, se) = mean_and_se(&payoffs);
    let open = out.iter().filter(|o| !o.1).count() as f64 / n as f64;
    // an unstopped path can still collect at most level - c after the horizon
    let tail = open * (-p.rho * horizon).exp() * (level - p.c).abs();
    let mut r = base(mean, se, tail);
    r.depleted_fraction = 1.0 - open;
    Ok(r)
}

/// Analytic stopping value at the same state, for comparison.
pub fn stopping_reference(x: f64, y: f64, sol: &Solution) -> Result<f64> {
    Ok(stopping_value(x, y, sol)?.u)
}
