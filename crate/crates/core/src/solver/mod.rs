//! Trust-region minimization of the expected energy over tangents at fixed
//! marginals.

mod linear;
mod lm;
mod params;
mod residuals;

pub use lm::{lm_solve, IterationRecord, LmStats, StopReason, TrustRegionConfig};
pub use params::params_per_site;
pub use residuals::{
    abs_curvature_weights, abs_weight_pair, BlockKind, JacobianBlock, Linearization, ResidualBlock, ResidualSystem,
    ABS_WEIGHT_MAX, ABS_WEIGHT_MIN, WEIGHT_CUTOFF,
};

use crate::energy::Problem;
use crate::error::Result;
use crate::geometry::TangentLine;
use crate::scalar::Real;

/// Builds the residual system for marginals `q` and minimizes it from `lines`.
pub fn solve_tangents<T: Real, const D: usize>(
    problem: &Problem<T, D>,
    lines: &[TangentLine<T, D>],
    q: &[T],
    config: &TrustRegionConfig<T>,
) -> Result<(Vec<TangentLine<T, D>>, LmStats<T>)> {
    let system = ResidualSystem::build(problem, q)?;
    lm_solve(&system, lines, config)
}
