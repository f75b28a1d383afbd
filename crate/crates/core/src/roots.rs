//! Bracketed scalar root finding.
//!
//! Every root in this crate is bracketed by a sign analysis before it is
//! polished, so only bracketing methods are offered: Brent's hybrid of
//! bisection, secant and inverse quadratic interpolation, and a plain
//! geometric bracket expansion.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    pub x_tol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        RootOptions {
            x_tol: 1e-14,
            max_iter: 200,
        }
    }
}

/// Find a root of `f` in `[lo, hi]` where `f(lo)` and `f(hi)` differ in sign.
///
/// `f` may fail; the first failure is propagated.
pub fn brent<F>(mut f: F, lo: f64, hi: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::numeric(
            "roots",
            format!("interval [{lo}, {hi}] does not bracket a root ({fa:e}, {fb:e})"),
        ));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.x_tol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                // secant
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                // inverse quadratic interpolation
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::numeric("roots", "Brent iteration limit reached"))
}

/// Grow `hi = lo + step * 2^k` until `f(hi)` has the sign opposite to
/// `f(lo)`. Returns the bracketing `(lo', hi)` with `lo'` the last point
/// that kept the original sign.
pub fn expand_right<F>(mut f: F, lo: f64, step: f64, max_expansions: usize, what: &'static str) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let f_lo = f(lo)?;
    let mut last = lo;
    let mut width = step;
    for _ in 0..max_expansions {
        let hi = lo + width;
        let f_hi = f(hi)?;
        if f_hi.signum() != f_lo.signum() || f_hi == 0.0 {
            return Ok((last, hi));
        }
        last = hi;
        width *= 2.0;
    }
    Err(Error::NoBracket {
        what,
        expansions: max_expansions,
    })
}
