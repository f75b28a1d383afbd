//! The increasing fundamental solution `psi` of `(L - rho) u = 0` and the
//! special functions it needs.
//!
//! For the mean-reverting price the parabolic-cylinder form of `psi` is
//! evaluated through its integral representation with the Gaussian
//! prefactor cancelled:
//!
//! ```text
//! psi^(k)(x) = kappa^k / Gamma(s) * int_0^inf t^(s+k-1) exp(-t^2/2 + theta t) dt
//! s = rho / b,  kappa = sqrt(2b) / sigma,  theta = kappa (b x - a) / b
//! ```
//!
//! All four orders share one exponential per node, so they are integrated
//! together as a vector.

use crate::error::{Error, Result};
use crate::params::{Branch, ModelParams, QuadratureSpec};
use crate::quad::integrate_vec;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Above this `theta` the integrand is evaluated relative to its peak.
const LOG_SPACE_THETA: f64 = 30.0;
/// Tail truncation: drop the integrand once it is `e^-TAIL_DROP` below its peak.
const TAIL_DROP: f64 = 60.0;

fn lanczos_sum(z: f64) -> f64 {
    let mut x = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    x
}

/// Euler's Gamma function for positive arguments (Lanczos, g = 7).
pub fn gamma(s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("gamma requires s > 0, got {s}")));
    }
    if s < 0.5 {
        // reflection keeps the series in its accurate range
        let pi = std::f64::consts::PI;
        return Ok(pi / ((pi * s).sin() * gamma(1.0 - s)?));
    }
    let z = s - 1.0;
    let t = z + LANCZOS_G + 0.5;
    Ok((2.0 * std::f64::consts::PI).sqrt() * t.powf(z + 0.5) * (-t).exp() * lanczos_sum(z))
}

/// `ln Gamma(s)` for positive arguments.
pub fn ln_gamma(s: f64) -> Result<f64> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires s > 0, got {s}")));
    }
    if s < 0.5 {
        let pi = std::f64::consts::PI;
        return Ok((pi / (pi * s).sin()).ln() - ln_gamma(1.0 - s)?);
    }
    let z = s - 1.0;
    let t = z + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln())
}

/// `psi` and its first three derivatives at one point.
///
/// The true value of order `k` is `values[k] * exp(log_scale)`. The common
/// scale is only non-zero when the integrand had to be evaluated in log
/// space; ratios of orders never need it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiEval {
    pub x: f64,
    pub values: [f64; 4],
    pub err_est: [f64; 4],
    pub log_scale: f64,
}

impl PsiEval {
    /// `psi^(k)(x)`, including the stored scale.
    #[inline]
    pub fn value(&self, k: usize) -> f64 {
        if self.log_scale == 0.0 {
            self.values[k]
        } else {
            self.values[k] * self.log_scale.exp()
        }
    }

    /// `psi^(k) / psi^(k+1)`.
    #[inline]
    pub fn ratio(&self, k: usize) -> f64 {
        self.values[k] / self.values[k + 1]
    }

    /// Scale-free `psi^(k+2) psi^(k) - psi^(k+1)^2`, in units of `exp(2 log_scale)`.
    #[inline]
    pub fn wronskian_scaled(&self, k: usize) -> f64 {
        self.values[k + 2] * self.values[k] - self.values[k + 1] * self.values[k + 1]
    }

    /// `(sigma^2/2) psi^(k+2) + (a - b x) psi^(k+1) - (rho + k b) psi^(k)`
    /// relative to `psi^(k)`; vanishes for exact values.
    pub fn ode_residual(&self, p: &ModelParams, k: usize) -> f64 {
        let v = &self.values;
        let r = 0.5 * p.sigma * p.sigma * v[k + 2] + p.drift(self.x) * v[k + 1] - (p.rho + k as f64 * p.b) * v[k];
        r / v[k]
    }
}

/// Precomputed constants of the integral representation for one instance.
#[derive(Debug, Clone, Copy)]
pub struct OuPsi {
    params: ModelParams,
    quad: QuadratureSpec,
    order: f64,
    kappa: f64,
    ln_gamma_order: f64,
}

impl OuPsi {
    pub fn new(params: &ModelParams, quad: &QuadratureSpec) -> Result<Self> {
        params.validate()?;
        quad.validate()?;
        if params.branch() != Branch::OrnsteinUhlenbeck {
            return Err(Error::Domain("the integral representation of psi needs b > 0".into()));
        }
        let order = params.rho / params.b;
        Ok(OuPsi {
            params: *params,
            quad: *quad,
            order,
            kappa: (2.0 * params.b).sqrt() / params.sigma,
            ln_gamma_order: ln_gamma(order)?,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn quad(&self) -> &QuadratureSpec {
        &self.quad
    }

    /// Same instance with a different quadrature tolerance.
    pub fn with_quad(&self, quad: &QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        Ok(OuPsi { quad: *quad, ..*self })
    }

    /// Argument of the exponential's linear term at price `x`.
    #[inline]
    pub fn theta(&self, x: f64) -> f64 {
        let p = &self.params;
        self.kappa * (p.b * x - p.a) / p.b
    }

    /// Evaluate `psi, psi', psi'', psi'''` at `x`.
    pub fn eval(&self, x: f64) -> Result<PsiEval> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("psi needs a finite argument, got {x}")));
        }
        let theta = self.theta(x);
        let s = self.order;
        let shift = if theta > LOG_SPACE_THETA {
            0.5 * theta * theta
        } else {
            0.0
        };
        let q = &self.quad;
        let split = q.split_point;

        let log_base = move |t: f64| (s - 1.0) * t.ln() - 0.5 * t * t + theta * t - shift;
        let base = move |t: f64| {
            let e = log_base(t).exp();
            [e, e * t, e * t * t, e * t * t * t]
        };

        let mut value = [0.0; 4];
        let mut error = [0.0; 4];
        let mut add = |r: crate::quad::Integral<4>| {
            for k in 0..4 {
                value[k] += r.value[k];
                error[k] += r.error[k];
            }
        };

        // Head [0, split]. With s < 1 the factor t^(s-1) is singular at 0,
        // so substitute t = u^(1/s), which turns t^(s-1) dt into du / s.
        if s < 1.0 {
            let inv = 1.0 / s;
            let head = move |u: f64| {
                let t = u.powf(inv);
                let e = (-0.5 * t * t + theta * t - shift).exp() * inv;
                [e, e * t, e * t * t, e * t * t * t]
            };
            add(integrate_vec(
                head,
                0.0,
                split.powf(s),
                q.rel_tol,
                q.abs_tol,
                q.max_subdivisions,
            )?);
        } else {
            add(integrate_vec(
                base,
                0.0,
                split,
                q.rel_tol,
                q.abs_tol,
                q.max_subdivisions,
            )?);
        }

        // Tail [split, t_hi]; Gaussian decay bounds the truncation.
        let log3 = move |t: f64| log_base(t) + 3.0 * t.ln();
        let peak = 0.5 * (theta + (theta * theta + 4.0 * (s + 2.0)).sqrt());
        let peak_log = log3(peak.max(split));
        if log3(split) > peak_log - TAIL_DROP || peak > split {
            let mut t_hi = peak.max(split) + 1.0;
            while log3(t_hi) > peak_log - TAIL_DROP {
                t_hi += 1.0;
            }
            let mut cuts = vec![split];
            if peak > split {
                cuts.push(peak);
            }
            cuts.push(t_hi);
            for w in cuts.windows(2) {
                add(integrate_vec(
                    base,
                    w[0],
                    w[1],
                    q.rel_tol,
                    q.abs_tol,
                    q.max_subdivisions,
                )?);
            }
        }

        let log_norm = shift - self.ln_gamma_order;
        let (norm, log_scale) = if log_norm.abs() < 600.0 {
            (log_norm.exp(), 0.0)
        } else {
            (1.0, log_norm)
        };
        let mut values = [0.0; 4];
        let mut err_est = [0.0; 4];
        let mut kp = 1.0;
        for k in 0..4 {
            values[k] = kp * value[k] * norm;
            err_est[k] = kp * error[k] * norm;
            if !(values[k] > 0.0) || !values[k].is_finite() {
                return Err(Error::numeric(
                    "specfun",
                    format!("psi^({k})({x}) evaluated to {}", values[k]),
                ));
            }
            kp *= self.kappa;
        }
        Ok(PsiEval {
            x,
            values,
            err_est,
            log_scale,
        })
    }

    /// Single derivative order `k` in `0..=3`.
    pub fn psi_k(&self, x: f64, k: usize) -> Result<f64> {
        if k > 3 {
            return Err(Error::Domain(format!("derivative order {k} not supported (max 3)")));
        }
        Ok(self.eval(x)?.value(k))
    }

    /// `d psi^(k) / d a = -psi^(k+1) / b`.
    pub fn partial_a(&self, x: f64, k: usize) -> Result<f64> {
        if k > 2 {
            return Err(Error::Domain(format!("partial_a supports k <= 2, got {k}")));
        }
        Ok(-self.eval(x)?.value(k + 1) / self.params.b)
    }

    /// `d psi^(k) / d sigma = ((a - b x) / (b sigma)) psi^(k+1) - (k / sigma) psi^(k)`.
    pub fn partial_sigma(&self, x: f64, k: usize) -> Result<f64> {
        if k > 2 {
            return Err(Error::Domain(format!("partial_sigma supports k <= 2, got {k}")));
        }
        let p = &self.params;
        let e = self.eval(x)?;
        Ok(p.drift(x) / (p.b * p.sigma) * e.value(k + 1) - k as f64 / p.sigma * e.value(k))
    }
}

/// Free-function form of [`OuPsi::psi_k`].
pub fn psi_k(x: f64, k: usize, p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    OuPsi::new(p, q)?.psi_k(x, k)
}

pub fn psi_partial_a(x: f64, k: usize, p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    OuPsi::new(p, q)?.partial_a(x, k)
}

pub fn psi_partial_sigma(x: f64, k: usize, p: &ModelParams, q: &QuadratureSpec) -> Result<f64> {
    OuPsi::new(p, q)?.partial_sigma(x, k)
}

/// Exponent `n > 0` of the Brownian fundamental solution `psi(x) = e^{n x}`;
/// the positive root of `(sigma^2/2) n^2 + a n - rho = 0`.
pub fn exponent_n(p: &ModelParams) -> Result<f64> {
    p.validate()?;
    if p.branch() != Branch::Brownian {
        return Err(Error::Domain("exponent_n is defined for b = 0 only".into()));
    }
    let s2 = p.sigma * p.sigma;
    let m = p.a / s2;
    let root = (m * m + 2.0 * p.rho / s2).sqrt();
    // Rationalized form avoids cancellation when a > 0.
    Ok(if m > 0.0 {
        2.0 * p.rho / s2 / (m + root)
    } else {
        root - m
    })
}

/// `B(u) = (sigma^2/2) u^2 + a u - rho`.
pub fn b_polynomial(p: &ModelParams, u: f64) -> f64 {
    0.5 * p.sigma * p.sigma * u * u + p.a * u - p.rho
}

pub fn psi_bm(x: f64, p: &ModelParams) -> Result<f64> {
    Ok((exponent_n(p)? * x).exp())
}

/// Uniform table of `psi` and its derivatives with cubic Hermite
/// interpolation, for hot loops that cannot afford a quadrature per call.
#[derive(Debug, Clone)]
pub struct PsiGrid {
    lo: f64,
    step: f64,
    nodes: Vec<[f64; 4]>,
}

impl PsiGrid {
    pub fn new(psi: &OuPsi, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > lo) || n < 2 {
            return Err(Error::Domain(format!("bad psi grid [{lo}, {hi}] with {n} nodes")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let nodes = (0..n)
            .map(|i| {
                let e = psi.eval(lo + step * i as f64)?;
                Ok(std::array::from_fn(|k| e.value(k)))
            })
            .collect::<Result<Vec<[f64; 4]>>>()?;
        Ok(PsiGrid { lo, step, nodes })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.step * (self.nodes.len() - 1) as f64
    }

    /// Interpolated `psi^(k)(x)` for `k <= 2`; `None` outside the grid.
    #[inline]
    pub fn eval(&self, x: f64, k: usize) -> Option<f64> {
        debug_assert!(k <= 2);
        let u = (x - self.lo) / self.step;
        if !(u >= 0.0) || u > (self.nodes.len() - 1) as f64 {
            return None;
        }
        let i = (u as usize).min(self.nodes.len() - 2);
        let t = u - i as f64;
        let (y0, y1) = (self.nodes[i][k], self.nodes[i + 1][k]);
        let (d0, d1) = (self.nodes[i][k + 1] * self.step, self.nodes[i + 1][k + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        Some((2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * d1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_psi() -> OuPsi {
        OuPsi::new(&ModelParams::mean_reverting_reference(), &QuadratureSpec::default()).unwrap()
    }

    #[test]
    fn gamma_anchors() {
        assert!((gamma(1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!((gamma(0.5).unwrap() - std::f64::consts::PI.sqrt()).abs() < 1e-14);
        assert!((gamma(5.0).unwrap() - 24.0).abs() < 1e-12);
        // 30-digit reference: 2.37043618441660090864647350418
        let g = gamma(0.375).unwrap();
        assert!((g / 2.370_436_184_416_600_9 - 1.0).abs() < 1e-13, "{g}");
        assert!(gamma(0.0).is_err());
        assert!(gamma(-1.5).is_err());
    }

    #[test]
    fn ln_gamma_matches_gamma() {
        for s in [0.1, 0.375, 0.75, 1.5, 7.5, 20.0] {
            let lhs = ln_gamma(s).unwrap();
            let rhs = gamma(s).unwrap().ln();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()), "s={s}");
        }
    }

    #[test]
    fn psi_at_mean_reversion_level_has_closed_form() {
        let p = ModelParams::mean_reverting_reference();
        let psi = reference_psi();
        let s = p.rho / p.b;
        // int_0^inf t^{s-1} e^{-t^2/2} dt = 2^{s/2-1} Gamma(s/2)
        let expected = 2f64.powf(0.5 * s - 1.0) * gamma(0.5 * s).unwrap() / gamma(s).unwrap();
        let got = psi.psi_k(p.a / p.b, 0).unwrap();
        assert!((got / expected - 1.0).abs() < 1e-11, "{got} vs {expected}");
        // 30-digit value from an independent evaluation
        assert!((got / 1.180_642_490_887_536_4 - 1.0).abs() < 1e-11);
    }

    #[test]
    fn psi_matches_reference_values() {
        // Independent 30-digit quadrature of the same representation.
        let cases: [(f64, [f64; 4]); 3] = [
            (
                -1.0,
                [
                    0.688_300_061_269_518_16,
                    0.156_886_707_819_985_78,
                    0.120_222_287_587_778_83,
                    0.148_150_064_467_469_02,
                ],
            ),
            (
                0.5,
                [
                    1.267_339_166_528_258_3,
                    0.948_897_585_813_485_96,
                    1.781_693_581_342_017_1,
                    4.634_073_558_211_702_9,
                ],
            ),
            (
                2.0,
                [
                    33.316_140_677_380_639,
                    147.990_966_813_846_82,
                    778.997_186_425_539_56,
                    4_530.884_617_655_945_9,
                ],
            ),
        ];
        let psi = reference_psi();
        for (x, want) in cases {
            let e = psi.eval(x).unwrap();
            for (k, want) in want.iter().enumerate() {
                assert!(
                    (e.value(k) / want - 1.0).abs() < 1e-11,
                    "x={x} k={k}: {} vs {want}",
                    e.value(k)
                );
            }
        }
    }

    #[test]
    fn ode_residual_and_wronskian() {
        let p = ModelParams::mean_reverting_reference();
        let psi = reference_psi();
        for i in 0..40 {
            let x = -2.0 + 0.1 * i as f64;
            let e = psi.eval(x).unwrap();
            for k in 0..2 {
                assert!(e.ode_residual(&p, k).abs() < 1e-8, "x={x} k={k}");
                assert!(e.wronskian_scaled(k) > 0.0);
            }
        }
    }

    #[test]
    fn log_space_evaluation_keeps_ratios() {
        // b small and x high gives theta > 30
        let p = ModelParams::new(0.4, 0.02, 0.8, 0.375, 0.3, 0.25).unwrap();
        let psi = OuPsi::new(&p, &QuadratureSpec::default()).unwrap();
        let x = 200.0;
        assert!(psi.theta(x) > LOG_SPACE_THETA);
        let e = psi.eval(x).unwrap();
        for k in 0..2 {
            assert!(e.ode_residual(&p, k).abs() < 1e-8);
            assert!(e.wronskian_scaled(k) > 0.0);
        }
    }

    #[test]
    fn psi_k_rejects_bad_order_and_branch() {
        assert!(reference_psi().psi_k(0.0, 4).is_err());
        assert!(OuPsi::new(&ModelParams::brownian_reference(), &QuadratureSpec::default()).is_err());
    }

    #[test]
    fn brownian_exponent() {
        let p = ModelParams::brownian_reference();
        let n = exponent_n(&p).unwrap();
        assert!((n - 0.625).abs() < 1e-15);
        assert!(b_polynomial(&p, n).abs() < 1e-14);
        assert_eq!(psi_bm(0.0, &p).unwrap(), 1.0);
        let neg = ModelParams { a: -0.4, ..p };
        let n = exponent_n(&neg).unwrap();
        assert!(n > 0.0 && b_polynomial(&neg, n).abs() < 1e-14);
        assert!(exponent_n(&ModelParams::mean_reverting_reference()).is_err());
    }

    #[test]
    fn partials_match_finite_differences() {
        let p = ModelParams::mean_reverting_reference();
        let q = QuadratureSpec {
            rel_tol: 1e-13,
            ..Default::default()
        };
        let h = 1e-4;
        for &x in &[-0.5, 0.4, 1.2] {
            for k in 0..3 {
                let up = psi_k(x, k, &p.with("a", p.a + h).unwrap(), &q).unwrap();
                let dn = psi_k(x, k, &p.with("a", p.a - h).unwrap(), &q).unwrap();
                let fd = (up - dn) / (2.0 * h);
                let an = psi_partial_a(x, k, &p, &q).unwrap();
                assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "a: x={x} k={k} {fd} {an}");

                let up = psi_k(x, k, &p.with("sigma", p.sigma + h).unwrap(), &q).unwrap();
                let dn = psi_k(x, k, &p.with("sigma", p.sigma - h).unwrap(), &q).unwrap();
                let fd = (up - dn) / (2.0 * h);
                let an = psi_partial_sigma(x, k, &p, &q).unwrap();
                assert!(
                    (fd - an).abs() < 1e-6 * an.abs().max(1.0),
                    "sigma: x={x} k={k} {fd} {an}"
                );
            }
        }
        // theta = 0 and k = 0 make the sigma derivative vanish
        assert!(psi_partial_sigma(p.a / p.b, 0, &p, &q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn halving_tolerance_moves_less_than_error_estimate() {
        let loose = reference_psi();
        let tight = loose
            .with_quad(&QuadratureSpec {
                rel_tol: 0.5e-10,
                ..Default::default()
            })
            .unwrap();
        for &x in &[-2.0, 0.0, 0.74, 1.0, 2.0] {
            let a = loose.eval(x).unwrap();
            let b = tight.eval(x).unwrap();
            for k in 0..4 {
                assert!(
                    (a.value(k) - b.value(k)).abs() <= a.err_est[k].max(1e-15 * a.value(k)),
                    "x={x} k={k}"
                );
            }
        }
    }

    #[test]
    fn grid_interpolation_is_accurate() {
        let psi = reference_psi();
        let grid = PsiGrid::new(&psi, -2.0, 1.5, 351).unwrap();
        for &x in &[-1.234, 0.0101, 0.777, 1.499] {
            let e = psi.eval(x).unwrap();
            for k in 0..3 {
                let g = grid.eval(x, k).unwrap();
                assert!(
                    (g / e.value(k) - 1.0).abs() < 1e-8,
                    "x={x} k={k} {}",
                    g / e.value(k) - 1.0
                );
            }
        }
        assert!(grid.eval(1.6, 0).is_none());
        assert!(grid.eval(-2.1, 0).is_none());
    }
}
