//! Finite-difference solver of the variational inequality
//! `max{Lw - rho w, -alpha w_x - w_y + x - c} = 0`, `w(x, 0) = 0`,
//! used as a method-independent check of the analytic value surface.
//!
//! Reserve levels are processed upwards. On row `y_j` the gradient
//! constraint becomes the obstacle
//! `O(x) = V(x - alpha dy, y_{j-1}) + (x - c) dy - alpha dy^2 / 2`
//! (sell one quantum), and the row problem
//! `min{(rho - L_h) V, V - O} = 0` is solved exactly by policy iteration
//! on a tridiagonal system with upwinded drift.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::boundary::{Region, Solution};
use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::value::value;

pub const QVI_CSV_VERSION: &str = "optex-qvi v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Lower price; `None` places it `margin` below `x_inf` (or `x*`).
    pub x_lo: Option<f64>,
    /// Upper price; `None` places it `margin` above `x0` (or `x*`).
    pub x_hi: Option<f64>,
    pub margin: f64,
    pub nx: usize,
    pub y_max: f64,
    pub ny: usize,
    /// Policy iteration stops once the sup-norm update falls below this.
    pub tol: f64,
    /// Policy iterations allowed per reserve row.
    pub max_sweeps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_lo: None,
            x_hi: None,
            margin: 1.2,
            nx: 400,
            y_max: 2.0,
            ny: 60,
            tol: 1e-12,
            max_sweeps: 200,
        }
    }
}

impl GridSpec {
    pub fn with_size(&self, nx: usize, ny: usize) -> Self {
        GridSpec { nx, ny, ..*self }
    }

    /// The price range for a solved instance.
    pub fn x_range(&self, sol: &Solution) -> (f64, f64) {
        let (lower, upper) = reference_prices(sol);
        (
            self.x_lo.unwrap_or(lower - self.margin),
            self.x_hi.unwrap_or(upper + self.margin),
        )
    }

    pub fn dy(&self) -> f64 {
        self.y_max / (self.ny - 1) as f64
    }

    pub fn validate(&self, sol: &Solution) -> Result<()> {
        if self.nx < 5 || self.ny < 2 {
            return Err(Error::Config(format!(
                "grid needs nx >= 5 and ny >= 2, got nx = {}, ny = {}",
                self.nx, self.ny
            )));
        }
        if !(self.y_max > 0.0) || !(self.tol > 0.0) || self.max_sweeps == 0 || !(self.margin > 0.0) {
            return Err(Error::Config(
                "grid needs y_max, tol, margin and max_sweeps positive".into(),
            ));
        }
        let (lo, hi) = self.x_range(sol);
        let (lower, upper) = reference_prices(sol);
        if !(lo < lower - 1.0 && upper + 1.0 < hi) {
            return Err(Error::Config(format!(
                "grid [{lo}, {hi}] must extend more than 1 beyond [{lower}, {upper}]"
            )));
        }
        let dx = (hi - lo) / (self.nx - 1) as f64;
        if sol.params().alpha * self.dy() < dx {
            return Err(Error::Config(format!(
                "price impact of one reserve step ({}) is below one price cell ({dx})",
                sol.params().alpha * self.dy()
            )));
        }
        Ok(())
    }
}

/// `(x_inf, x0)`, or `(x*, x*)` on the Brownian branch.
fn reference_prices(sol: &Solution) -> (f64, f64) {
    match sol {
        Solution::Brownian(b) => (b.x_star, b.x_star),
        Solution::Ou(o) => (o.table.x_inf(), o.table.x0()),
    }
}

/// Converged discrete value function on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QviGrid {
    pub params: ModelParams,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `values[j][i]` at `(xs[i], ys[j])`.
    pub values: Vec<Vec<f64>>,
    /// Whether the selling branch is active at the node.
    pub active: Vec<Vec<bool>>,
    /// Largest `|min{(rho - L_h) V, V - O}|` over all rows.
    pub residual: f64,
    pub iterations: usize,
}

/// Coefficients of `(rho - L_h)` at interior nodes: `lower[i] V_{i-1} +
/// diag[i] V_i + upper[i] V_{i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Stencil {
    pub fn assemble(p: &ModelParams, xs: &[f64]) -> Self {
        let n = xs.len();
        let dx = xs[1] - xs[0];
        let diffusion = 0.5 * p.sigma * p.sigma / (dx * dx);
        let mut s = Stencil {
            lower: vec![0.0; n],
            diag: vec![1.0; n],
            upper: vec![0.0; n],
        };
        for (i, &x) in xs.iter().enumerate().take(n - 1).skip(1) {
            let mu = p.drift(x);
            let up = diffusion + mu.max(0.0) / dx;
            let down = diffusion + (-mu).max(0.0) / dx;
            s.lower[i] = -down;
            s.upper[i] = -up;
            s.diag[i] = p.rho + up + down;
        }
        s
    }

    /// Off-diagonals nonpositive and strict diagonal dominance: the
    /// discrete operator is an M-matrix, so the scheme is monotone.
    pub fn is_monotone(&self) -> bool {
        (1..self.diag.len() - 1)
            .all(|i| self.lower[i] <= 0.0 && self.upper[i] <= 0.0 && self.diag[i] > -(self.lower[i] + self.upper[i]))
    }

    fn apply(&self, v: &[f64], i: usize) -> f64 {
        self.lower[i] * v[i - 1] + self.diag[i] * v[i] + self.upper[i] * v[i + 1]
    }
}

/// Thomas algorithm; `a` sub-, `b` main and `c` super-diagonal.
fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let m = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / m;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Linear interpolation of a row, or the analytic value left of the grid.
fn row_value(xs: &[f64], row: &[f64], x: f64, y: f64, sol: &Solution) -> Result<f64> {
    let dx = xs[1] - xs[0];
    if x < xs[0] {
        return Ok(value(x, y, sol)?.w);
    }
    let t = (x - xs[0]) / dx;
    let i = (t.floor() as usize).min(xs.len() - 2);
    let f = t - i as f64;
    Ok((1.0 - f) * row[i] + f * row[i + 1])
}

struct RowSolution {
    values: Vec<f64>,
    active: Vec<bool>,
    residual: f64,
    iterations: usize,
}

/// Solve `min{(rho - L_h) V, V - O} = 0` with Dirichlet ends by Howard's
/// policy iteration started from the policy `start`.
fn solve_row(
    stencil: &Stencil,
    obstacle: &[f64],
    (left, right): (f64, f64),
    start: &[bool],
    g: &GridSpec,
) -> Result<RowSolution> {
    let n = obstacle.len();
    let mut active = start.to_vec();
    let mut v = vec![0.0; n];
    let (mut a, mut b, mut c, mut d) = (vec![0.0; n], vec![1.0; n], vec![0.0; n], vec![0.0; n]);
    d[0] = left;
    d[n - 1] = right;
    for it in 1..=g.max_sweeps {
        for i in 1..n - 1 {
            if active[i] {
                (a[i], b[i], c[i], d[i]) = (0.0, 1.0, 0.0, obstacle[i]);
            } else {
                (a[i], b[i], c[i], d[i]) = (stencil.lower[i], stencil.diag[i], stencil.upper[i], 0.0);
            }
        }
        let next = solve_tridiagonal(&a, &b, &c, &d);
        let update = next.iter().zip(&v).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        v = next;
        let mut changed = false;
        for i in 1..n - 1 {
            let pde = stencil.apply(&v, i);
            let gap = v[i] - obstacle[i];
            let want = if gap < pde {
                true
            } else if pde < gap {
                false
            } else {
                active[i]
            };
            changed |= want != active[i];
            active[i] = want;
        }
        if !changed || update < g.tol {
            let residual = (1..n - 1)
                .map(|i| stencil.apply(&v, i).min(v[i] - obstacle[i]).abs())
                .fold(0.0, f64::max);
            return Ok(RowSolution {
                values: v,
                active,
                residual,
                iterations: it,
            });
        }
    }
    let residual = (1..n - 1)
        .map(|i| stencil.apply(&v, i).min(v[i] - obstacle[i]).abs())
        .fold(0.0, f64::max);
    Err(Error::numeric(
        "oracle",
        format!(
            "policy iteration did not settle in {} sweeps (residual {residual:e})",
            g.max_sweeps
        ),
    ))
}

/// Solve the discrete variational inequality on the grid `g`.
pub fn solve_qvi(sol: &Solution, g: &GridSpec) -> Result<QviGrid> {
    g.validate(sol)?;
    let p = *sol.params();
    let (lo, hi) = g.x_range(sol);
    let dx = (hi - lo) / (g.nx - 1) as f64;
    let dy = g.dy();
    let xs: Vec<f64> = (0..g.nx).map(|i| lo + dx * i as f64).collect();
    let ys: Vec<f64> = (0..g.ny).map(|j| dy * j as f64).collect();
    let stencil = Stencil::assemble(&p, &xs);
    let lump = |x: f64| (x - p.c) * dy - 0.5 * p.alpha * dy * dy;

    let mut values = vec![vec![0.0; g.nx]];
    let mut active = vec![vec![false; g.nx]];
    let mut residual: f64 = 0.0;
    let mut iterations = 0;
    for j in 1..g.ny {
        let prev = &values[j - 1];
        let obstacle = xs
            .iter()
            .map(|&x| Ok(row_value(&xs, prev, x - p.alpha * dy, ys[j - 1], sol)? + lump(x)))
            .collect::<Result<Vec<f64>>>()?;
        let left = value(xs[0], ys[j], sol)?.w;
        let right = value(xs[g.nx - 1], ys[j], sol)?.w;
        let row = solve_row(&stencil, &obstacle, (left, right), &active[j - 1], g)?;
        residual = residual.max(row.residual);
        iterations += row.iterations;
        values.push(row.values);
        active.push(row.active);
    }
    Ok(QviGrid {
        params: p,
        xs,
        ys,
        values,
        active,
        residual,
        iterations,
    })
}

impl QviGrid {
    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    /// Lowest price with the selling branch active on row `j`.
    pub fn exercise_envelope(&self, j: usize) -> Option<f64> {
        self.active[j].iter().position(|&a| a).map(|i| self.xs[i])
    }

    /// Largest violation of the discrete HJB sign conditions: waiting nodes
    /// need `V >= O`, selling nodes need `(rho - L_h) V >= 0`.
    pub fn sign_violation(&self, sol: &Solution) -> Result<f64> {
        let p = &self.params;
        let stencil = Stencil::assemble(p, &self.xs);
        let dy = self.ys[1] - self.ys[0];
        let mut worst: f64 = 0.0;
        for j in 1..self.ys.len() {
            for i in 1..self.xs.len() - 1 {
                let x = self.xs[i];
                let o = row_value(&self.xs, &self.values[j - 1], x - p.alpha * dy, self.ys[j - 1], sol)?
                    + (x - p.c) * dy
                    - 0.5 * p.alpha * dy * dy;
                let v = self.values[j][i];
                let slack = if self.active[j][i] {
                    stencil.apply(&self.values[j], i)
                } else {
                    v - o
                };
                worst = worst.max(-slack);
            }
        }
        Ok(worst)
    }

    /// Write `x,y,value,active` rows after a version comment line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::numeric("oracle", e.to_string());
        writeln!(out, "# {QVI_CSV_VERSION}").map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::numeric("oracle", e.to_string());
        w.write_record(["x", "y", "value", "active"]).map_err(csv_err)?;
        for (j, y) in self.ys.iter().enumerate() {
            for (i, x) in self.xs.iter().enumerate() {
                w.write_record(&[
                    x.to_string(),
                    y.to_string(),
                    self.values[j][i].to_string(),
                    u8::from(self.active[j][i]).to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub nx: usize,
    pub ny: usize,
    /// `sup |V - w| / (1 + |w|)` over interior nodes.
    pub sup_rel: f64,
    pub sup_abs: f64,
    pub waiting_sup_rel: f64,
    pub selling_sup_rel: f64,
    /// Largest distance, in price cells, between the exercise envelope and
    /// the analytic boundary over rows with `y > 0`.
    pub envelope_cells: f64,
    pub residual: f64,
}

/// Compare an oracle grid against the analytic value surface.
pub fn compare(grid: &QviGrid, sol: &Solution) -> Result<DiscrepancyReport> {
    let nx = grid.xs.len();
    let mut r = DiscrepancyReport {
        nx,
        ny: grid.ys.len(),
        sup_rel: 0.0,
        sup_abs: 0.0,
        waiting_sup_rel: 0.0,
        selling_sup_rel: 0.0,
        envelope_cells: 0.0,
        residual: grid.residual,
    };
    for (j, &y) in grid.ys.iter().enumerate().skip(1) {
        for i in 1..nx - 1 {
            let w = value(grid.xs[i], y, sol)?;
            let diff = (grid.values[j][i] - w.w).abs();
            let rel = diff / (1.0 + w.w.abs());
            r.sup_abs = r.sup_abs.max(diff);
            r.sup_rel = r.sup_rel.max(rel);
            match w.region {
                Region::Waiting | Region::Boundary => r.waiting_sup_rel = r.waiting_sup_rel.max(rel),
                Region::Sell1 | Region::Sell2 => r.selling_sup_rel = r.selling_sup_rel.max(rel),
            }
        }
        let target = sol.boundary(y)?;
        let cells = match grid.exercise_envelope(j) {
            Some(e) => (e - target).abs() / grid.dx(),
            None => f64::INFINITY,
        };
        r.envelope_cells = r.envelope_cells.max(cells);
    }
    Ok(r)
}

/// `sup |a - b|` over two grids of the same shape.
pub fn grid_distance(a: &QviGrid, b: &QviGrid) -> Result<f64> {
    if a.xs != b.xs || a.ys != b.ys {
        return Err(Error::Domain("grids have different nodes".into()));
    }
    Ok(a.values
        .iter()
        .flatten()
        .zip(b.values.iter().flatten())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max))
}
