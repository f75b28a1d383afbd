//! Fixtures shared by the criterion benches.

use optex_core::{BoundaryGrid, ModelParams, QuadratureSpec, Solution};

/// Mean-reverting reference instance.
pub fn ou() -> Solution {
    Solution::solve(
        &ModelParams::mean_reverting_reference(),
        &QuadratureSpec::default(),
        &BoundaryGrid::default(),
    )
    .expect("reference instance solves")
}

/// Brownian reference instance.
pub fn brownian() -> Solution {
    Solution::solve(
        &ModelParams::brownian_reference(),
        &QuadratureSpec::default(),
        &BoundaryGrid::default(),
    )
    .expect("reference instance solves")
}
