//! The value function, its partial derivatives and the residuals of the
//! variational inequality it solves.

use serde::{Deserialize, Serialize};

use crate::boundary::{Coefficients, OuSolution, Region, Solution};
use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Value function and partials at one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuePoint {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub w_x: f64,
    pub w_xx: f64,
    pub w_y: f64,
    pub region: Region,
}

impl ValuePoint {
    /// `L w - rho w` from the stored partials.
    pub fn generator(&self, p: &ModelParams) -> f64 {
        p.generator(self.x, self.w, self.w_x, self.w_xx)
    }

    /// Gradient-constraint member `-alpha w_x - w_y + x - c`.
    pub fn constraint(&self, p: &ModelParams) -> f64 {
        -p.alpha * self.w_x - self.w_y + self.x - p.c
    }
}

fn check_reserve(y: f64) -> Result<()> {
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::Domain(format!("reserve must be finite and >= 0, got {y}")));
    }
    Ok(())
}

fn depleted(x: f64, region: Region) -> ValuePoint {
    ValuePoint {
        x,
        y: 0.0,
        w: 0.0,
        w_x: 0.0,
        w_xx: 0.0,
        w_y: 0.0,
        region,
    }
}

fn sell_all(p: &ModelParams, x: f64, y: f64) -> ValuePoint {
    ValuePoint {
        x,
        y,
        w: (x - p.c) * y - 0.5 * p.alpha * y * y,
        w_x: y,
        w_xx: 0.0,
        w_y: x - p.c - p.alpha * y,
        region: Region::Sell1,
    }
}

/// `A(y)` and `A'(y)` for the mean-reverting branch.
fn coefficients_at(sol: &OuSolution, y: f64) -> Result<Coefficients> {
    let g = sol.table.inverse(y)?;
    let mut c = sol.table.integrand().coefficients(g)?;
    if y == 0.0 {
        c.m = 0.0;
    }
    Ok(c)
}

/// `A(y) = M(G(y))`; zero at `y = 0`.
pub fn coeff_a(y: f64, sol: &Solution) -> Result<f64> {
    check_reserve(y)?;
    match sol {
        Solution::Ou(o) => Ok(coefficients_at(o, y)?.m),
        Solution::Brownian(b) => {
            let p = &b.params;
            Ok((-p.c * b.n - 1.0).exp() * (-(-p.alpha * b.n * y).exp_m1()) / (p.alpha * b.n * b.n))
        }
    }
}

/// `A'(y) = N(G(y))`; at `y = 0` the right limit `N(x0)`.
pub fn coeff_a_prime(y: f64, sol: &Solution) -> Result<f64> {
    check_reserve(y)?;
    match sol {
        Solution::Ou(o) => Ok(coefficients_at(o, y)?.n),
        Solution::Brownian(b) => {
            let p = &b.params;
            Ok((-p.c * b.n - 1.0).exp() * (-p.alpha * b.n * y).exp() / b.n)
        }
    }
}

/// Upper bound of `A`: its limit `M(x_inf)` as the reserve grows without bound.
pub fn coeff_a_bound(sol: &Solution) -> Result<f64> {
    match sol {
        Solution::Ou(o) => Ok(o.table.integrand().coefficients(o.table.x_inf())?.m),
        Solution::Brownian(b) => {
            let p = &b.params;
            Ok((-p.c * b.n - 1.0).exp() / (p.alpha * b.n * b.n))
        }
    }
}

/// Value and partials on the mean-reverting branch.
pub fn value_ou(x: f64, y: f64, sol: &OuSolution) -> Result<ValuePoint> {
    check_reserve(y)?;
    let p = *sol.table.params();
    let region = sol.classify(x, y)?;
    value_ou_in(x, y, sol, &p, region)
}

fn value_ou_in(x: f64, y: f64, sol: &OuSolution, p: &ModelParams, region: Region) -> Result<ValuePoint> {
    match region {
        Region::Sell1 => Ok(sell_all(p, x, y)),
        Region::Waiting | Region::Boundary => {
            if y == 0.0 {
                return Ok(depleted(x, region));
            }
            let c = coefficients_at(sol, y)?;
            let e = sol.psi().eval(x)?;
            let (psi0, psi1, psi2) = (e.value(0), e.value(1), e.value(2));
            Ok(ValuePoint {
                x,
                y,
                w: c.m * psi0,
                w_x: c.m * psi1,
                w_xx: c.m * psi2,
                w_y: c.n * psi0,
                region,
            })
        }
        Region::Sell2 => {
            let z = crate::boundary::solve_z(x, y, &sol.table)?;
            let u = x - p.alpha * z;
            let c = sol.table.integrand().coefficients(u)?;
            Ok(ValuePoint {
                x,
                y,
                w: c.m * c.psi[0] + (x - p.c) * z - 0.5 * p.alpha * z * z,
                w_x: c.m * c.psi[1] + z,
                w_xx: c.m * c.psi[2],
                w_y: c.n * c.psi[0],
                region,
            })
        }
    }
}

/// Closed-form value and partials on the Brownian branch.
pub fn value_bm(x: f64, y: f64, p: &ModelParams) -> Result<ValuePoint> {
    check_reserve(y)?;
    let n = crate::specfun::exponent_n(p)?;
    let x_star = p.c + 1.0 / n;
    let alpha = p.alpha;
    if y == 0.0 {
        return Ok(depleted(x, Region::Waiting));
    }
    let tol = 1e-12 * (1.0 + x.abs());
    if x < x_star + tol {
        let region = if x < x_star - tol {
            Region::Waiting
        } else {
            Region::Boundary
        };
        let e = ((x - p.c) * n - 1.0).exp();
        let fill = -(-alpha * n * y).exp_m1();
        return Ok(ValuePoint {
            x,
            y,
            w: e * fill / (alpha * n * n),
            w_x: e * fill / (alpha * n),
            w_xx: e * fill / alpha,
            w_y: e * (-alpha * n * y).exp() / n,
            region,
        });
    }
    let z = (x - x_star) / alpha;
    if y <= z {
        return Ok(sell_all(p, x, y));
    }
    let rest = (-alpha * n * (y - z)).exp();
    Ok(ValuePoint {
        x,
        y,
        w: -(-alpha * n * (y - z)).exp_m1() / (alpha * n * n) + (x - p.c) * z - 0.5 * alpha * z * z,
        w_x: -rest / (alpha * n) + (x - p.c) / alpha,
        w_xx: -(-alpha * n * (y - z)).exp_m1() / alpha,
        w_y: rest / n,
        region: Region::Sell2,
    })
}

/// Value and partials for either branch.
pub fn value(x: f64, y: f64, sol: &Solution) -> Result<ValuePoint> {
    match sol {
        Solution::Brownian(b) => value_bm(x, y, &b.params),
        Solution::Ou(o) => {
            check_reserve(y)?;
            let region = sol.classify(x, y)?;
            value_ou_in(x, y, o, sol.params(), region)
        }
    }
}

/// Tolerances for the residual checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbTolerances {
    /// `|L w - rho w| <= interior * (1 + |w|)` on the waiting region.
    pub interior: f64,
    /// `|constraint| <= selling` and `L w - rho w <= selling` on the selling region.
    pub selling: f64,
}

impl Default for HjbTolerances {
    fn default() -> Self {
        HjbTolerances {
            interior: 1e-7,
            selling: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HjbSample {
    pub x: f64,
    pub y: f64,
    pub region: Region,
    pub w: f64,
    /// `L w - rho w`.
    pub generator: f64,
    /// `-alpha w_x - w_y + x - c`.
    pub constraint: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbReport {
    pub samples: Vec<HjbSample>,
    /// Largest `|L w - rho w| / (1 + |w|)` over waiting states.
    pub max_interior_residual: f64,
    /// Largest constraint member over waiting states; must be negative.
    pub max_waiting_slack: f64,
    /// Largest `|constraint|` over selling states.
    pub max_selling_constraint: f64,
    /// Largest `L w - rho w` over selling states; must not be positive.
    pub max_selling_generator: f64,
    pub failures: usize,
    pub passed: bool,
}

/// Evaluate both members of the variational inequality at each state.
pub fn hjb_residuals(states: &[(f64, f64)], sol: &Solution, tol: &HjbTolerances) -> Result<HjbReport> {
    let p = *sol.params();
    let mut report = HjbReport {
        samples: Vec::with_capacity(states.len()),
        max_interior_residual: 0.0,
        max_waiting_slack: f64::NEG_INFINITY,
        max_selling_constraint: 0.0,
        max_selling_generator: f64::NEG_INFINITY,
        failures: 0,
        passed: true,
    };
    for &(x, y) in states {
        let v = value(x, y, sol)?;
        let generator = v.generator(&p);
        let constraint = v.constraint(&p);
        let interior = generator.abs() / (1.0 + v.w.abs());
        let pass = match v.region {
            Region::Waiting if y == 0.0 => v.w == 0.0,
            Region::Waiting => {
                report.max_interior_residual = report.max_interior_residual.max(interior);
                report.max_waiting_slack = report.max_waiting_slack.max(constraint);
                interior <= tol.interior && constraint < 0.0
            }
            Region::Boundary => interior <= tol.interior && constraint.abs() <= tol.selling,
            Region::Sell1 | Region::Sell2 => {
                report.max_selling_constraint = report.max_selling_constraint.max(constraint.abs());
                report.max_selling_generator = report.max_selling_generator.max(generator);
                constraint.abs() <= tol.selling && generator <= tol.selling
            }
        };
        if !pass {
            report.failures += 1;
            report.passed = false;
        }
        report.samples.push(HjbSample {
            x,
            y,
            region: v.region,
            w: v.w,
            generator,
            constraint,
            pass,
        });
    }
    Ok(report)
}

/// One-sided estimates of the partials on each side of a boundary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit {
    pub x: f64,
    pub y: f64,
    /// `(waiting side, selling side)` estimates.
    pub w_x: (f64, f64),
    pub w_xx: (f64, f64),
    pub w_y: (f64, f64),
    /// Largest relative disagreement of the three pairs.
    pub max_rel_jump: f64,
}

fn rel_gap(pair: (f64, f64)) -> f64 {
    let scale = pair.0.abs().max(pair.1.abs()).max(1e-12);
    (pair.0 - pair.1).abs() / scale
}

/// Compare one-sided finite differences across the boundary point
/// `(G(y), y)`. Differences in `x` use step `h`; `w_y` is differenced in
/// `y` at `G(y) -+ h`, `G(y) -+ 2h` and extrapolated to the boundary.
pub fn smooth_fit(y: f64, sol: &Solution, h: f64) -> Result<SmoothFit> {
    if !(y > 0.0) {
        return Err(Error::Domain("smooth fit needs y > 0".into()));
    }
    let xb = sol.boundary(y)?;
    let w = |x: f64, y: f64| -> Result<f64> { Ok(value(x, y, sol)?.w) };
    let wx = |x: f64| -> Result<f64> { Ok(value(x, y, sol)?.w_x) };
    // Keep y-steps small enough that (x, y +- k) stays on one side.
    let slope = match sol {
        Solution::Brownian(_) => 1.0,
        Solution::Ou(o) => o.table.theta(xb)?.min(1.0),
    };
    let k = 0.25 * h * slope;
    let wy_fd = |x: f64| -> Result<f64> { Ok((w(x, y + k)? - w(x, y - k)?) / (2.0 * k)) };

    let side = |dir: f64| -> Result<(f64, f64, f64)> {
        let (w0, w1, w2) = (w(xb, y)?, w(xb + dir * h, y)?, w(xb + dir * 2.0 * h, y)?);
        let d_w = dir * (-3.0 * w0 + 4.0 * w1 - w2) / (2.0 * h);
        let (g0, g1, g2) = (wx(xb)?, wx(xb + dir * h)?, wx(xb + dir * 2.0 * h)?);
        let d_wx = dir * (-3.0 * g0 + 4.0 * g1 - g2) / (2.0 * h);
        let wy = 2.0 * wy_fd(xb + dir * h)? - wy_fd(xb + dir * 2.0 * h)?;
        Ok((d_w, d_wx, wy))
    };
    let left = side(-1.0)?;
    let right = side(1.0)?;
    let w_x = (left.0, right.0);
    let w_xx = (left.1, right.1);
    let w_y = (left.2, right.2);
    Ok(SmoothFit {
        x: xb,
        y,
        w_x,
        w_xx,
        w_y,
        max_rel_jump: rel_gap(w_x).max(rel_gap(w_xx)).max(rel_gap(w_y)),
    })
}

/// `u = alpha w_x + w_y` with its first two `x`-derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingPoint {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub u_x: f64,
    pub u_xx: f64,
    pub region: Region,
    /// `L u - rho u - alpha b A(y) psi'(x)`.
    pub generator: f64,
    /// `x - c - u`.
    pub obstacle: f64,
}

impl StoppingPoint {
    /// `max{generator, obstacle}`, zero wherever the stopping equation holds.
    pub fn hjb(&self) -> f64 {
        self.generator.max(self.obstacle)
    }
}

/// Value of the associated stopping problem, `u = alpha w_x + w_y`.
pub fn stopping_value(x: f64, y: f64, sol: &Solution) -> Result<StoppingPoint> {
    check_reserve(y)?;
    let p = *sol.params();
    let region = sol.classify(x, y)?;
    let (u, u_x, u_xx, running) = match sol {
        Solution::Brownian(_) => {
            let v = value(x, y, sol)?;
            match region {
                Region::Waiting | Region::Boundary if y > 0.0 => {
                    let n = crate::specfun::exponent_n(&p)?;
                    let u = p.alpha * v.w_x + v.w_y;
                    (u, n * u, n * n * u, 0.0)
                }
                Region::Waiting | Region::Boundary => {
                    // y = 0: u is the right limit in y
                    let n = crate::specfun::exponent_n(&p)?;
                    let u = ((x - p.c) * n - 1.0).exp() / n;
                    (u, n * u, n * n * u, 0.0)
                }
                _ => (p.alpha * v.w_x + v.w_y, 1.0, 0.0, 0.0),
            }
        }
        Solution::Ou(o) => {
            let c = coefficients_at(o, y)?;
            let e = o.psi().eval(x)?;
            let d: [f64; 4] = std::array::from_fn(|k| e.value(k));
            let running = p.alpha * p.b * c.m * d[1];
            match region {
                Region::Waiting | Region::Boundary => (
                    p.alpha * c.m * d[1] + c.n * d[0],
                    p.alpha * c.m * d[2] + c.n * d[1],
                    p.alpha * c.m * d[3] + c.n * d[2],
                    running,
                ),
                _ => {
                    let v = value(x, y, sol)?;
                    (p.alpha * v.w_x + v.w_y, 1.0, 0.0, running)
                }
            }
        }
    };
    Ok(StoppingPoint {
        x,
        y,
        u,
        u_x,
        u_xx,
        region,
        generator: p.generator(x, u, u_x, u_xx) - running,
        obstacle: x - p.c - u,
    })
}

/// `max w / (y (1 + y)(1 + |x|))` over a reference set of states.
pub fn growth_constant(states: &[(f64, f64)], sol: &Solution) -> Result<f64> {
    let mut k: f64 = 0.0;
    for &(x, y) in states {
        if y > 0.0 {
            let v = value(x, y, sol)?;
            k = k.max(v.w / (y * (1.0 + y) * (1.0 + x.abs())));
        }
    }
    Ok(k)
}

/// Sign diagnostic of the auxiliary function
/// `chi(u) = (rho + 2b)(x_hat - u) + b psi(u) N(u)` on `(x_inf, x0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiDiagnostic {
    pub points: usize,
    pub max: f64,
    pub argmax: f64,
    pub all_negative: bool,
}

pub fn chi_diagnostic(sol: &OuSolution, points: usize) -> Result<ChiDiagnostic> {
    let p = sol.table.params();
    let x_hat = (p.a + (p.rho + p.b) * p.c) / (p.rho + 2.0 * p.b);
    let (lo, hi) = (sol.table.x_inf(), sol.table.x0());
    let mut max = f64::NEG_INFINITY;
    let mut argmax = hi;
    for i in 1..=points {
        let u = lo + (hi - lo) * i as f64 / points as f64;
        let c = sol.table.integrand().coefficients(u)?;
        let chi = (p.rho + 2.0 * p.b) * (x_hat - u) + p.b * c.psi[0] * c.n;
        if chi > max {
            max = chi;
            argmax = u;
        }
    }
    Ok(ChiDiagnostic {
        points,
        max,
        argmax,
        all_negative: max < 0.0,
    })
}
