//! Optimal extraction of an exhaustible resource whose sales depress the
//! spot price.
//!
//! The spot price follows `dX = (a - bX) dt + sigma dW` (drifted Brownian
//! motion when `b = 0`, Ornstein-Uhlenbeck otherwise) and each unit sold
//! lowers it by `alpha`. The crate computes the free boundary separating
//! waiting from selling, the value function on both sides of it, and
//! independent checks by Monte Carlo and by a finite-difference solver of
//! the variational inequality.

// `!(x > 0.0)` is used on purpose so NaN fails validation; quadrature
// constants keep their published digits.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod boundary;
pub mod error;
pub mod oracle;
pub mod params;
pub mod quad;
pub mod roots;
pub mod sim;
pub mod specfun;
pub mod value;

pub use boundary::{BoundaryGrid, BoundaryTable, CriticalPrices, Region, Solution};
pub use error::{Error, Result};
pub use oracle::{DiscrepancyReport, GridSpec, QviGrid};
pub use params::{Branch, ModelParams, QuadratureSpec};
pub use sim::{Policy, SimConfig, SimResult};
pub use specfun::{OuPsi, PsiEval, PsiGrid};
pub use value::{HjbReport, ValuePoint};
