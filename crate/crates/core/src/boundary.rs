//! Critical prices and the free boundary.
//!
//! For `b = 0` the selling threshold is the constant `x* = c + 1/n`. For
//! `b > 0` it is the curve `x = G(y)` where `G` inverts
//!
//! ```text
//! F(x) = int_x^{x0} Theta(z) dz,   x in (x_inf, x0]
//! ```
//!
//! `F` has a logarithmic singularity at `x_inf`, so it is tabulated on a grid
//! that is uniform in `s = ln(x - x_inf)` and interpolated there.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Branch, ModelParams, QuadratureSpec};
use crate::quad::integrate;
use crate::roots::{brent, expand_right, RootOptions};
use crate::specfun::{exponent_n, OuPsi, PsiEval};

/// Identifier of the interpolation rule written into table metadata.
pub const INTERPOLATION_RULE: &str = "monotone-cubic-hermite-in-log-offset";
/// Identifier of the model used below the deepest tabulated node.
pub const TAIL_MODEL: &str = "log-singularity";
/// Version tag of the boundary CSV schema.
pub const BOUNDARY_CSV_VERSION: &str = "optex-boundary v1";

/// Relative width used to separate "on the boundary" from either side.
const TIE_TOL: f64 = 1e-12;
/// Below this offset (as a fraction of `x0 - x_inf`) `Phi` is summed as a
/// Taylor series anchored at its root instead of by direct subtraction.
const SERIES_FRACTION: f64 = 0.1;
const MAX_EXPANSIONS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum CriticalPrices {
    Brownian { n: f64, x_star: f64 },
    OrnsteinUhlenbeck { x0: f64, x_inf: f64, x_bar: f64 },
}

/// Position of a state relative to the free boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Waiting,
    Sell1,
    Sell2,
    Boundary,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Waiting => "waiting",
            Region::Sell1 => "sell1",
            Region::Sell2 => "sell2",
            Region::Boundary => "boundary",
        }
    }

    pub fn is_selling(&self) -> bool {
        matches!(self, Region::Sell1 | Region::Sell2)
    }
}

/// `x_bar = (a + rho c) / (rho + b)`.
pub fn x_bar(p: &ModelParams) -> f64 {
    (p.a + p.rho * p.c) / (p.rho + p.b)
}

/// `x* = c + 1/n` for the Brownian branch.
pub fn x_star_bm(p: &ModelParams) -> Result<f64> {
    Ok(p.c + 1.0 / exponent_n(p)?)
}

/// Absolute tolerance of every critical-price and lump-size root.
pub const ROOT_X_TOL: f64 = 1e-14;

fn root_opts() -> RootOptions {
    RootOptions {
        x_tol: ROOT_X_TOL,
        max_iter: 200,
    }
}

/// Unique root on `(c, inf)` of `(x - c) psi^(k+1) - psi^(k)`, `k` in `{0, 1}`.
fn critical_root(psi: &OuPsi, k: usize, what: &'static str) -> Result<f64> {
    let c = psi.params().c;
    // Ratio form keeps the function O(1) whatever the scale of psi.
    let g = |x: f64| -> Result<f64> { Ok((x - c) - psi.eval(x)?.ratio(k)) };
    let step = 0.25 * (psi.params().sigma / (2.0 * psi.params().b).sqrt()).max(0.1);
    let (lo, hi) = expand_right(g, c, step, MAX_EXPANSIONS, what)?;
    brent(g, lo, hi, root_opts())
}

/// Root of `(x - c) psi' - psi = 0`.
pub fn find_x0(p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    critical_root(&OuPsi::new(p, q)?, 0, "x0")
}

/// Root of `(x - c) psi'' - psi' = 0`.
pub fn find_x_inf(p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    critical_root(&OuPsi::new(p, q)?, 1, "x_inf")
}

/// Solve for the critical prices of either branch.
pub fn critical_prices(p: &ModelParams, q: &QuadratureSpec) -> Result<CriticalPrices> {
    p.validate()?;
    match p.branch() {
        Branch::Brownian => {
            let n = exponent_n(p)?;
            Ok(CriticalPrices::Brownian {
                n,
                x_star: p.c + 1.0 / n,
            })
        }
        Branch::OrnsteinUhlenbeck => {
            let psi = OuPsi::new(p, q)?;
            let x0 = critical_root(&psi, 0, "x0")?;
            let x_inf = critical_root(&psi, 1, "x_inf")?;
            check_ordering(p, x0, x_inf)?;
            Ok(CriticalPrices::OrnsteinUhlenbeck {
                x0,
                x_inf,
                x_bar: x_bar(p),
            })
        }
    }
}

fn check_ordering(p: &ModelParams, x0: f64, x_inf: f64) -> Result<()> {
    if !(p.c < x_inf && x_inf < x0) {
        return Err(Error::numeric(
            "boundary",
            format!("critical prices out of order: c={}, x_inf={x_inf}, x0={x0}", p.c),
        ));
    }
    Ok(())
}

/// Integrand `Theta = -F'` of the free boundary with `x_inf` known.
///
/// `Phi(z) = (z - c) psi'' - psi'` vanishes at `x_inf`; close to it the
/// direct difference loses all digits, so `Phi` is instead summed as its
/// Taylor series around `z`, using `Phi(x_inf) = 0` and derivatives from the
/// recursion `psi^(k+2) = (2/sigma^2)((rho + k b) psi^(k) - (a - b z) psi^(k+1))`.
#[derive(Debug, Clone, Copy)]
pub struct Integrand {
    psi: OuPsi,
    x0: f64,
    x_inf: f64,
}

impl Integrand {
    pub fn new(psi: OuPsi, x0: f64, x_inf: f64) -> Self {
        Integrand { psi, x0, x_inf }
    }

    pub fn psi(&self) -> &OuPsi {
        &self.psi
    }

    fn phi(&self, e: &PsiEval, d: f64) -> f64 {
        let p = self.psi.params();
        let z = e.x;
        let v = &e.values;
        if d.abs() >= SERIES_FRACTION * (self.x0 - self.x_inf) {
            return (z - p.c) * v[2] - v[1];
        }
        // derivatives psi^(k) at z, extended by the ODE recursion
        const TERMS: usize = 24;
        let mut der = [0.0; TERMS + 3];
        der[..4].copy_from_slice(v);
        let two_over_s2 = 2.0 / (p.sigma * p.sigma);
        for k in 2..TERMS + 1 {
            der[k + 2] = two_over_s2 * ((p.rho + k as f64 * p.b) * der[k] - p.drift(z) * der[k + 1]);
        }
        // Phi(z) = sum_{m>=1} (-1)^{m+1} Phi^(m)(z) d^m / m!
        // Phi^(m) = (z - c) psi^(m+2) + (m - 1) psi^(m+1)
        let mut sum = 0.0;
        let mut coef = 1.0;
        for m in 1..=TERMS {
            coef *= d / m as f64;
            let dm = (z - p.c) * der[m + 2] + (m as f64 - 1.0) * der[m + 1];
            let term = if m % 2 == 1 { coef * dm } else { -coef * dm };
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    }

    /// `psi` at `z` together with `M(z)` and `N(z)`, the coefficient maps
    /// with `A(y) = M(G(y))` and `A'(y) = N(G(y))`.
    pub fn coefficients(&self, z: f64) -> Result<Coefficients> {
        let p = self.psi.params();
        let e = self.psi.eval(z)?;
        let v = &e.values;
        let wr = v[2] * v[0] - v[1] * v[1];
        if !(wr > 0.0) {
            return Err(Error::numeric(
                "value",
                format!("psi'' psi - psi'^2 is not positive at {z}"),
            ));
        }
        let scale = e.log_scale.exp();
        let phi = self.phi(&e, z - self.x_inf);
        Ok(Coefficients {
            psi: std::array::from_fn(|k| e.value(k)),
            m: ((z - p.c) * v[1] - v[0]) / (-p.alpha * wr) / scale,
            n: phi / wr / scale,
        })
    }

    /// `Theta(z)`; requires `z > x_inf`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        self.eval_at_offset(z - self.x_inf)
    }

    /// `Theta(x_inf + d)`. Passing the offset itself avoids the rounding of
    /// `x_inf + d` when `d` is tiny.
    pub fn eval_at_offset(&self, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(Error::Domain(format!(
                "boundary integrand needs z > x_inf = {}, got offset {d}",
                self.x_inf
            )));
        }
        let z = self.x_inf + d;
        let c = self.psi.params().c;
        let alpha = self.psi.params().alpha;
        let e = self.psi.eval(z)?;
        let v = &e.values;
        let phi = self.phi(&e, d);
        let m_num = (z - c) * v[1] - v[0];
        let wr = v[2] * v[0] - v[1] * v[1];
        let num = (v[3] * m_num - v[2] * phi) * v[0];
        let den = -alpha * wr * phi;
        let theta = num / den;
        if !theta.is_finite() {
            return Err(Error::numeric("boundary", format!("Theta({z}) is not finite")));
        }
        Ok(theta)
    }
}

/// `psi, psi', psi'', psi'''` at a point with the coefficient maps there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub psi: [f64; 4],
    pub m: f64,
    pub n: f64,
}

/// `Theta(z)` for a single point; solves for the critical prices first.
pub fn boundary_integrand(z: f64, p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    let psi = OuPsi::new(p, q)?;
    let x0 = critical_root(&psi, 0, "x0")?;
    let x_inf = critical_root(&psi, 1, "x_inf")?;
    Integrand::new(psi, x0, x_inf).eval(z)
}

/// Node layout of the boundary table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundaryGrid {
    /// Nodes per halving of the offset from `x_inf`.
    pub per_halving: usize,
    /// Deepest offset as a fraction of `x0 - x_inf`.
    pub depth: f64,
}

impl Default for BoundaryGrid {
    fn default() -> Self {
        BoundaryGrid {
            per_halving: 24,
            depth: 1e-6,
        }
    }
}

impl BoundaryGrid {
    pub fn validate(&self) -> Result<()> {
        if self.per_halving < 2 {
            return Err(Error::Config(format!(
                "boundary per_halving must be >= 2, got {}",
                self.per_halving
            )));
        }
        if !(self.depth > 0.0 && self.depth < 0.5) {
            return Err(Error::Config(format!(
                "boundary depth must lie in (0, 0.5), got {}",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Tabulated free boundary `F` on `(x_inf, x0]`.
#[derive(Debug, Clone)]
pub struct BoundaryTable {
    integrand: Integrand,
    /// Strictly increasing; the last node is `x0`.
    nodes: Vec<f64>,
    /// `ln(node - x_inf)`.
    log_offsets: Vec<f64>,
    /// `F` at the nodes, strictly decreasing, last entry 0.
    values: Vec<f64>,
    /// Limited slopes `dF/ds` used by the interpolant.
    slopes: Vec<f64>,
    /// Coefficient of the logarithmic tail below the first node.
    tail_kappa: f64,
}

impl BoundaryTable {
    /// Tabulate `F` by integrating `Theta` between consecutive nodes.
    pub fn build(p: &ModelParams, q: &QuadratureSpec, grid: &BoundaryGrid) -> Result<Self> {
        grid.validate()?;
        let psi = OuPsi::new(p, q)?;
        let x0 = critical_root(&psi, 0, "x0")?;
        let x_inf = critical_root(&psi, 1, "x_inf")?;
        check_ordering(p, x0, x_inf)?;
        Self::build_with(Integrand::new(psi, x0, x_inf), grid)
    }

    pub fn build_with(integrand: Integrand, grid: &BoundaryGrid) -> Result<Self> {
        let (x0, x_inf) = (integrand.x0, integrand.x_inf);
        let span = x0 - x_inf;
        let s_top = span.ln();
        let s_bottom = (grid.depth * span).ln();
        let halvings = (1.0 / grid.depth).log2();
        let n = ((halvings * grid.per_halving as f64).ceil() as usize).max(2);
        let hs = (s_top - s_bottom) / n as f64;

        let mut log_offsets: Vec<f64> = (0..=n).map(|j| s_bottom + hs * j as f64).collect();
        log_offsets[n] = s_top;
        let mut nodes: Vec<f64> = log_offsets.iter().map(|s| x_inf + s.exp()).collect();
        nodes[n] = x0;

        let q = *integrand.psi.quad();
        let mut values = vec![0.0; n + 1];
        for j in (0..n).rev() {
            let piece = integrate_log(&integrand, log_offsets[j], log_offsets[j + 1], &q).map_err(|e| {
                Error::numeric(
                    "boundary",
                    format!("quadrature failed on node {j} (x = {}): {e}", nodes[j]),
                )
            })?;
            values[j] = values[j + 1] + piece;
        }
        Self::assemble(integrand, nodes, values)
    }

    /// Finish a table from node positions and values: exact slopes,
    /// monotone limiting and the tail fit.
    fn assemble(integrand: Integrand, nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let x_inf = integrand.x_inf;
        let log_offsets: Vec<f64> = nodes.iter().map(|x| (x - x_inf).ln()).collect();
        let mut slopes = Vec::with_capacity(nodes.len());
        for &x in &nodes {
            slopes.push(-integrand.eval(x)? * (x - x_inf));
        }
        for (j, w) in values.windows(2).enumerate() {
            if !(w[1] < w[0]) {
                return Err(Error::numeric(
                    "boundary",
                    format!("F is not strictly decreasing between nodes {j} and {}", j + 1),
                ));
            }
        }
        let tail_kappa = -slopes[0];
        fritsch_carlson(&log_offsets, &values, &mut slopes);
        Ok(BoundaryTable {
            integrand,
            nodes,
            log_offsets,
            values,
            slopes,
            tail_kappa,
        })
    }

    pub fn params(&self) -> &ModelParams {
        self.integrand.psi.params()
    }

    pub fn psi(&self) -> &OuPsi {
        &self.integrand.psi
    }

    pub fn integrand(&self) -> &Integrand {
        &self.integrand
    }

    pub fn x0(&self) -> f64 {
        self.integrand.x0
    }

    pub fn x_inf(&self) -> f64 {
        self.integrand.x_inf
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail_kappa(&self) -> f64 {
        self.tail_kappa
    }

    /// `Theta(x) = -F'(x)` from the underlying functions.
    pub fn theta(&self, x: f64) -> Result<f64> {
        self.integrand.eval(x)
    }

    fn hermite(&self, i: usize, s: f64) -> f64 {
        let h = self.log_offsets[i + 1] - self.log_offsets[i];
        let t = (s - self.log_offsets[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.values[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.values[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1]
    }

    /// Interpolated `F(x)` on `(x_inf, x0]`; below the first node the
    /// logarithmic tail model is used.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let x0 = self.x0();
        if x > x0 {
            if x - x0 <= TIE_TOL * (1.0 + x0.abs()) {
                return Ok(0.0);
            }
            return Err(Error::Domain(format!("F is defined up to x0 = {x0}, got {x}")));
        }
        if !(x > self.x_inf()) {
            return Err(Error::Domain(format!(
                "F is defined above x_inf = {}, got {x}",
                self.x_inf()
            )));
        }
        Ok(self.eval_inner(x))
    }

    fn eval_inner(&self, x: f64) -> f64 {
        if x >= self.x0() {
            return 0.0;
        }
        let s = (x - self.x_inf()).ln();
        if s <= self.log_offsets[0] {
            return self.values[0] + self.tail_kappa * (self.log_offsets[0] - s);
        }
        let k = self.nodes.partition_point(|&node| node <= x);
        let i = k.saturating_sub(1).min(self.nodes.len() - 2);
        self.hermite(i, s)
    }

    /// Interpolated `F(x)` and `F'(x)` for `x` in `(x_inf, x0)`; cheap
    /// enough for per-step use in simulation.
    pub fn eval_with_slope(&self, x: f64) -> (f64, f64) {
        let d = x - self.x_inf();
        let s = d.ln();
        if s <= self.log_offsets[0] {
            return (
                self.values[0] + self.tail_kappa * (self.log_offsets[0] - s),
                -self.tail_kappa / d,
            );
        }
        let k = self.nodes.partition_point(|&node| node <= x);
        let i = k.saturating_sub(1).min(self.nodes.len() - 2);
        let h = self.log_offsets[i + 1] - self.log_offsets[i];
        let t = (s - self.log_offsets[i]) / h;
        let t2 = t * t;
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (h * self.slopes[i], h * self.slopes[i + 1]);
        let f = (2.0 * t2 * t - 3.0 * t2 + 1.0) * f0
            + (t2 * t - 2.0 * t2 + t) * m0
            + (-2.0 * t2 * t + 3.0 * t2) * f1
            + (t2 * t - t2) * m1;
        let df_dt = (6.0 * t2 - 6.0 * t) * (f0 - f1) + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (3.0 * t2 - 2.0 * t) * m1;
        (f, df_dt / (h * d))
    }

    /// `F` extended by 0 above `x0` and by `+inf` at and below `x_inf`.
    pub fn eval_extended(&self, x: f64) -> f64 {
        if x >= self.x0() {
            0.0
        } else if x <= self.x_inf() {
            f64::INFINITY
        } else {
            self.eval_inner(x)
        }
    }

    /// `F(x)` by direct quadrature from the nearest node at or above `x`.
    pub fn eval_exact(&self, x: f64) -> Result<f64> {
        self.eval(x)?;
        if x >= self.x0() {
            return Ok(0.0);
        }
        let j = self.nodes.partition_point(|&node| node < x);
        let s = (x - self.x_inf()).ln();
        let q = self.integrand.psi.quad();
        Ok(self.values[j] + integrate_log(&self.integrand, s, self.log_offsets[j], q)?)
    }

    /// `G(y) = F^{-1}(y)` from the interpolant.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) {
            return Err(Error::Domain(format!("F^-1 needs y >= 0, got {y}")));
        }
        if y == 0.0 {
            return Ok(self.x0());
        }
        if y.is_infinite() {
            return Ok(self.x_inf());
        }
        // values are decreasing: k = number of nodes with F >= y
        let k = self.values.partition_point(|&f| f >= y);
        if k == 0 {
            let s = self.log_offsets[0] - (y - self.values[0]) / self.tail_kappa;
            // past ~1e-16 below the asymptote the offset is not representable
            return Ok((self.x_inf() + s.exp()).max(self.x_inf().next_up()));
        }
        if k == self.values.len() {
            return Ok(self.x0());
        }
        let i = k - 1;
        let (s_lo, s_hi) = (self.log_offsets[i], self.log_offsets[i + 1]);
        let s = brent(
            |s| Ok(self.hermite(i, s) - y),
            s_lo,
            s_hi,
            RootOptions {
                x_tol: 1e-15,
                max_iter: 200,
            },
        )?;
        Ok((self.x_inf() + s.exp()).min(self.x0()))
    }

    /// `G(y)` polished by Newton steps on the quadrature form of `F`.
    pub fn inverse_exact(&self, y: f64) -> Result<f64> {
        let mut x = self.inverse(y)?;
        if y == 0.0 {
            return Ok(x);
        }
        for _ in 0..20 {
            let r = self.eval_exact(x)? - y;
            let step = r / self.theta(x)?;
            let mut next = x + step;
            if !(next > self.x_inf()) {
                next = 0.5 * (x + self.x_inf());
            }
            next = next.min(self.x0());
            let done = (next - x).abs() <= 1e-15 * (1.0 + x.abs());
            x = next;
            if done {
                break;
            }
        }
        Ok(x)
    }

    /// Write the table with its schema tag and metadata comment lines.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let p = self.params();
        let q = self.psi().quad();
        let io = |e: std::io::Error| Error::Config(format!("writing boundary table: {e}"));
        writeln!(out, "# {BOUNDARY_CSV_VERSION}").map_err(io)?;
        writeln!(
            out,
            "# x0={},x_inf={},interpolation={INTERPOLATION_RULE},tail={TAIL_MODEL},tail_kappa={},a={},b={},sigma={},rho={},c={},alpha={},rel_tol={},abs_tol={},max_subdivisions={},split_point={}",
            self.x0(),
            self.x_inf(),
            self.tail_kappa,
            p.a,
            p.b,
            p.sigma,
            p.rho,
            p.c,
            p.alpha,
            q.rel_tol,
            q.abs_tol,
            q.max_subdivisions,
            q.split_point
        )
        .map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        let cs = |e: csv::Error| Error::Config(format!("writing boundary table: {e}"));
        w.write_record(["x", "F"]).map_err(cs)?;
        for (x, f) in self.nodes.iter().zip(&self.values) {
            w.write_record([x.to_string(), f.to_string()]).map_err(cs)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    /// Load a table written by [`BoundaryTable::write_csv`]. Slopes are
    /// recomputed from the stored parameters, so a round trip reproduces the
    /// interpolant exactly.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("boundary table: {m}"));
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        if line.trim() != format!("# {BOUNDARY_CSV_VERSION}") {
            return Err(bad(format!("unsupported schema line '{}'", line.trim())));
        }
        line.clear();
        reader.read_line(&mut line).map_err(|e| bad(e.to_string()))?;
        let meta = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| bad("missing metadata line".into()))?;
        let mut fields = std::collections::HashMap::new();
        for kv in meta.trim().split(',') {
            if let Some((k, v)) = kv.split_once('=') {
                fields.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let num = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .ok_or_else(|| bad(format!("metadata lacks '{k}'")))?
                .parse::<f64>()
                .map_err(|e| bad(format!("metadata '{k}': {e}")))
        };
        let p = ModelParams::new(
            num("a")?,
            num("b")?,
            num("sigma")?,
            num("rho")?,
            num("c")?,
            num("alpha")?,
        )?;
        let q = QuadratureSpec {
            rel_tol: num("rel_tol")?,
            abs_tol: num("abs_tol")?,
            max_subdivisions: num("max_subdivisions")? as usize,
            split_point: num("split_point")?,
        };
        let (x0, x_inf) = (num("x0")?, num("x_inf")?);

        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["x", "F"] {
            return Err(bad(format!(
                "expected header 'x,F', got '{}'",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| bad("short row".into()))?
                    .parse::<f64>()
                    .map_err(|e| bad(e.to_string()))
            };
            nodes.push(parse(0)?);
            values.push(parse(1)?);
        }
        if nodes.len() < 2 || *nodes.last().unwrap() != x0 {
            return Err(bad("table must end at x0".into()));
        }
        let psi = OuPsi::new(&p, &q)?;
        Self::assemble(Integrand::new(psi, x0, x_inf), nodes, values)
    }
}

/// `int_{s_lo}^{s_hi} Theta(x_inf + e^s) e^s ds`.
fn integrate_log(integrand: &Integrand, s_lo: f64, s_hi: f64, q: &QuadratureSpec) -> Result<f64> {
    let failure = std::cell::RefCell::new(None);
    let f = |s: f64| {
        let d = s.exp();
        match integrand.eval_at_offset(d) {
            Ok(v) => v * d,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    let res = integrate(f, s_lo, s_hi, q.rel_tol, q.abs_tol, q.max_subdivisions);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(res?.0)
}

/// Fritsch-Carlson limiter: keeps each Hermite piece monotone.
fn fritsch_carlson(s: &[f64], f: &[f64], m: &mut [f64]) {
    for i in 0..f.len() - 1 {
        let delta = (f[i + 1] - f[i]) / (s[i + 1] - s[i]);
        if delta == 0.0 {
            m[i] = 0.0;
            m[i + 1] = 0.0;
            continue;
        }
        let a = (m[i] / delta).max(0.0);
        let b = (m[i + 1] / delta).max(0.0);
        let r = a * a + b * b;
        let (a, b) = if r > 9.0 {
            let tau = 3.0 / r.sqrt();
            (tau * a, tau * b)
        } else {
            (a, b)
        };
        m[i] = a * delta;
        m[i + 1] = b * delta;
    }
}

/// `F(x)` from a table.
pub fn build_f(p: &ModelParams, q: &QuadratureSpec, grid: &BoundaryGrid) -> Result<BoundaryTable> {
    BoundaryTable::build(p, q, grid)
}

/// `G(y) = F^{-1}(y)` from a table.
pub fn f_inverse(y: f64, table: &BoundaryTable) -> Result<f64> {
    table.inverse(y)
}

/// `min (F_upper(x) - F_lower(x))` over `samples` points of the common
/// domain `(max x_inf, min x0]`, graded towards the left end where both
/// curves are steep. Positive when `upper` lies strictly above `lower`.
pub fn ordering_margin(lower: &BoundaryTable, upper: &BoundaryTable, samples: usize) -> Result<f64> {
    let lo = lower.x_inf().max(upper.x_inf());
    let hi = lower.x0().min(upper.x0());
    if !(hi > lo) {
        return Err(Error::Domain(format!("boundaries share no domain ({lo}, {hi}]")));
    }
    let mut margin = f64::INFINITY;
    for i in 1..=samples.max(1) {
        let t = i as f64 / samples.max(1) as f64;
        let x = lo + (hi - lo) * t * t;
        margin = margin.min(upper.eval_extended(x) - lower.eval_extended(x));
    }
    Ok(margin)
}

/// `min (G_upper(y) - G_lower(y))` over `y = 0` and `samples` log-spaced
/// levels in `[1e-6, y_max]`, with `G = F^-1`. Defined even when the two
/// price domains do not overlap.
pub fn inverse_gap(lower: &BoundaryTable, upper: &BoundaryTable, y_max: f64, samples: usize) -> Result<f64> {
    if !(y_max > 1e-6) {
        return Err(Error::Domain(format!("inverse gap needs y_max > 1e-6, got {y_max}")));
    }
    let mut gap = upper.x0() - lower.x0();
    let n = samples.max(2);
    for i in 0..n {
        let y = 1e-6 * (y_max / 1e-6).powf(i as f64 / (n - 1) as f64);
        gap = gap.min(upper.inverse(y)? - lower.inverse(y)?);
    }
    Ok(gap)
}

/// Lump size `z` solving `y - z = F(x - alpha z)` for a state in the
/// closure of `S2`: 0 on the boundary, `y` on the line `x - alpha y = x0`.
pub fn solve_z(x: f64, y: f64, table: &BoundaryTable) -> Result<f64> {
    let p = table.params();
    let (x0, x_inf) = (table.x0(), table.x_inf());
    let tol = TIE_TOL * (1.0 + x.abs());
    if !(y > 0.0) || !(x >= table.inverse(y)? - tol) || y < (x - x0) / p.alpha {
        return Err(Error::Domain(format!("({x}, {y}) is not in the closure of S2")));
    }
    let alpha = p.alpha;
    let r = |z: f64| Ok(y - z - table.eval_extended(x - alpha * z));
    let lo = ((x - x0) / alpha).max(0.0);
    let mut hi = y.min((x - x_inf) / alpha);
    if x - alpha * hi <= x_inf {
        // stay strictly right of the asymptote, where F is finite
        hi = (x - x_inf) * (1.0 - 1e-12) / alpha;
    }
    if r(lo)? <= 0.0 {
        // on the boundary or the S1 line
        return Ok(lo);
    }
    if r(hi)? > 0.0 {
        return Err(Error::numeric(
            "boundary",
            format!("z bracket [{lo}, {hi}] has no sign change at ({x}, {y})"),
        ));
    }
    brent(r, lo, hi, root_opts())
}

/// Closed-form Brownian ingredients.
#[derive(Debug, Clone, Copy)]
pub struct BrownianSolution {
    pub params: ModelParams,
    pub n: f64,
    pub x_star: f64,
}

/// Mean-reverting solution: `psi`, the critical prices and the table.
#[derive(Debug, Clone)]
pub struct OuSolution {
    pub table: BoundaryTable,
    pub x_bar: f64,
}

impl OuSolution {
    pub fn psi(&self) -> &OuPsi {
        self.table.psi()
    }

    pub fn classify(&self, x: f64, y: f64) -> Result<Region> {
        if !(y > 0.0) {
            return Ok(Region::Waiting);
        }
        let g = self.table.inverse(y)?;
        Ok(region_of(x, y, g, self.table.x0(), self.table.params().alpha))
    }
}

/// Region of `(x, y)` with `y > 0` given the boundary price `g = G(y)`.
fn region_of(x: f64, y: f64, g: f64, depletion_level: f64, alpha: f64) -> Region {
    let tol = TIE_TOL * (1.0 + x.abs());
    if x < g - tol {
        Region::Waiting
    } else if (x - g).abs() <= tol {
        Region::Boundary
    } else if y <= (x - depletion_level) / alpha {
        Region::Sell1
    } else {
        Region::Sell2
    }
}

/// Solved instance of either branch; the handle passed to `value` and `sim`.
#[derive(Debug, Clone)]
pub enum Solution {
    Brownian(BrownianSolution),
    Ou(OuSolution),
}

impl Solution {
    pub fn solve(p: &ModelParams, q: &QuadratureSpec, grid: &BoundaryGrid) -> Result<Self> {
        p.validate()?;
        match p.branch() {
            Branch::Brownian => {
                let n = exponent_n(p)?;
                Ok(Solution::Brownian(BrownianSolution {
                    params: *p,
                    n,
                    x_star: p.c + 1.0 / n,
                }))
            }
            Branch::OrnsteinUhlenbeck => Ok(Solution::from_table(BoundaryTable::build(p, q, grid)?)),
        }
    }

    pub fn from_table(table: BoundaryTable) -> Self {
        let x_bar = x_bar(table.params());
        Solution::Ou(OuSolution { table, x_bar })
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            Solution::Brownian(b) => &b.params,
            Solution::Ou(o) => o.table.params(),
        }
    }

    pub fn critical_prices(&self) -> CriticalPrices {
        match self {
            Solution::Brownian(b) => CriticalPrices::Brownian {
                n: b.n,
                x_star: b.x_star,
            },
            Solution::Ou(o) => CriticalPrices::OrnsteinUhlenbeck {
                x0: o.table.x0(),
                x_inf: o.table.x_inf(),
                x_bar: o.x_bar,
            },
        }
    }

    /// Price level at which immediate depletion starts: `x0`, or `x*`.
    pub fn depletion_level(&self) -> f64 {
        match self {
            Solution::Brownian(b) => b.x_star,
            Solution::Ou(o) => o.table.x0(),
        }
    }

    /// Lowest price at which an extractor with `y > 0` in reserve sells.
    pub fn boundary(&self, y: f64) -> Result<f64> {
        match self {
            Solution::Brownian(b) => Ok(b.x_star),
            Solution::Ou(o) => o.table.inverse(y),
        }
    }

    pub fn classify(&self, x: f64, y: f64) -> Result<Region> {
        if !(y > 0.0) {
            return Ok(Region::Waiting);
        }
        let g = self.boundary(y)?;
        Ok(region_of(x, y, g, self.depletion_level(), self.params().alpha))
    }

    /// Lump size bringing an `S2` state onto the boundary.
    pub fn solve_z(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            Solution::Brownian(b) => {
                let z = (x - b.x_star) / b.params.alpha;
                if !(y > 0.0 && z >= -TIE_TOL * (1.0 + x.abs()) && z <= y) {
                    return Err(Error::Domain(format!("({x}, {y}) is not in the closure of S2")));
                }
                Ok(z.max(0.0))
            }
            Solution::Ou(o) => solve_z(x, y, &o.table),
        }
    }
}

/// Region of `(x, y)` for a solved instance.
pub fn classify(x: f64, y: f64, solution: &Solution) -> Result<Region> {
    solution.classify(x, y)
}
