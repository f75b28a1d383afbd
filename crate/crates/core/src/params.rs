//! Market constants and numerical tolerances shared by every module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six constants defining a problem instance.
///
/// The uncontrolled spot price follows `dX = (a - bX) dt + sigma dW`; every
/// unit extracted costs `c` and pushes the price down by `alpha`. Future
/// profits are discounted at rate `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub rho: f64,
    pub c: f64,
    pub alpha: f64,
}

/// Which closed-form family the price dynamics belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `b = 0`: drifted Brownian motion.
    Brownian,
    /// `b > 0`: Ornstein-Uhlenbeck.
    OrnsteinUhlenbeck,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, sigma: f64, rho: f64, c: f64, alpha: f64) -> Result<Self> {
        let p = ModelParams {
            a,
            b,
            sigma,
            rho,
            c,
            alpha,
        };
        p.validate()?;
        Ok(p)
    }

    /// Brownian reference instance (a=0.4, sigma=0.8,
    /// rho=3/8, c=0.3, alpha=0.25).
    pub fn brownian_reference() -> Self {
        ModelParams {
            a: 0.4,
            b: 0.0,
            sigma: 0.8,
            rho: 0.375,
            c: 0.3,
            alpha: 0.25,
        }
    }

    /// The mean-reverting counterpart of [`ModelParams::brownian_reference`] with b=1.
    pub fn mean_reverting_reference() -> Self {
        ModelParams {
            b: 1.0,
            ..Self::brownian_reference()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.b, self.sigma, self.rho, self.c, self.alpha];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("all parameters must be finite".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParams(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.rho <= 0.0 {
            return Err(Error::InvalidParams(format!("rho must be > 0, got {}", self.rho)));
        }
        if self.c <= 0.0 {
            return Err(Error::InvalidParams(format!("c must be > 0, got {}", self.c)));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidParams(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.b < 0.0 {
            return Err(Error::InvalidParams(format!("b must be >= 0, got {}", self.b)));
        }
        Ok(())
    }

    /// Exact comparison on the stored value of `b`.
    #[allow(clippy::float_cmp)]
    pub fn branch(&self) -> Branch {
        if self.b == 0.0 {
            Branch::Brownian
        } else {
            Branch::OrnsteinUhlenbeck
        }
    }

    /// Drift of the uncontrolled price at `x`.
    #[inline]
    pub fn drift(&self, x: f64) -> f64 {
        self.a - self.b * x
    }

    /// Apply `(L - rho)` to a function with value `f`, slope `fx` and
    /// curvature `fxx` at `x`.
    #[inline]
    pub fn generator(&self, x: f64, f: f64, fx: f64, fxx: f64) -> f64 {
        0.5 * self.sigma * self.sigma * fxx + self.drift(x) * fx - self.rho * f
    }

    /// Copy with one named parameter replaced. Used by sweeps.
    pub fn with(&self, name: &str, value: f64) -> Result<Self> {
        let mut p = *self;
        match name {
            "a" => p.a = value,
            "b" => p.b = value,
            "sigma" => p.sigma = value,
            "rho" => p.rho = value,
            "c" => p.c = value,
            "alpha" => p.alpha = value,
            other => return Err(Error::InvalidParams(format!("unknown parameter '{other}'"))),
        }
        p.validate()?;
        Ok(p)
    }
}

/// Tolerances for the adaptive quadrature used by `specfun` and `boundary`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    /// Interior breakpoint separating the regularized head of the
    /// integral from its Gaussian tail.
    pub split_point: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            abs_tol: 0.0,
            max_subdivisions: 200,
            split_point: 1.0,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParams(format!(
                "rel_tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        if !(self.abs_tol >= 0.0) {
            return Err(Error::InvalidParams(format!(
                "abs_tol must be >= 0, got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions < 8 {
            return Err(Error::InvalidParams(format!(
                "max_subdivisions must be >= 8, got {}",
                self.max_subdivisions
            )));
        }
        if !(self.split_point > 0.0) || !self.split_point.is_finite() {
            return Err(Error::InvalidParams(format!(
                "split_point must be a positive finite number, got {}",
                self.split_point
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_is_selected_by_exact_b() {
        assert_eq!(ModelParams::brownian_reference().branch(), Branch::Brownian);
        assert_eq!(
            ModelParams::mean_reverting_reference().branch(),
            Branch::OrnsteinUhlenbeck
        );
        let tiny = ModelParams {
            b: 1e-300,
            ..ModelParams::brownian_reference()
        };
        assert_eq!(tiny.branch(), Branch::OrnsteinUhlenbeck);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ModelParams::new(0.4, 0.0, 0.0, 0.375, 0.3, 0.25).is_err());
        assert!(ModelParams::new(0.4, -1.0, 0.8, 0.375, 0.3, 0.25).is_err());
        assert!(ModelParams::new(0.4, 1.0, 0.8, 0.0, 0.3, 0.25).is_err());
        assert!(ModelParams::new(0.4, 1.0, 0.8, 0.375, -0.3, 0.25).is_err());
        assert!(ModelParams::new(0.4, 1.0, 0.8, 0.375, 0.3, 0.0).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0, 0.8, 0.375, 0.3, 0.25).is_err());
        assert!(ModelParams::new(-0.4, 1.0, 0.8, 0.375, 0.3, 0.25).is_ok());
    }

    #[test]
    fn quadrature_spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        let bad = QuadratureSpec {
            max_subdivisions: 4,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = QuadratureSpec {
            rel_tol: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn with_replaces_one_field() {
        let p = ModelParams::mean_reverting_reference().with("sigma", 1.1).unwrap();
        assert_eq!(p.sigma, 1.1);
        assert_eq!(p.a, 0.4);
        assert!(ModelParams::mean_reverting_reference().with("gamma", 1.0).is_err());
    }
}
