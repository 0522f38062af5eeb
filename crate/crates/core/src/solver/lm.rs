//! Inexact Levenberg-Marquardt iteration over tangent parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TangentLine;
use crate::scalar::Real;

use super::linear::DampedOperator;
use super::residuals::ResidualSystem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct TrustRegionConfig<T> {
    /// Initial damping, relative to the Gauss-Newton diagonal.
    pub initial_damping: T,
    /// Damping multiplier after a rejected step.
    pub damping_up: T,
    /// Largest damping reduction factor after an accepted step.
    pub damping_down: T,
    /// Steps with gain ratio at or below this are rejected.
    pub accept_threshold: T,
    pub max_iters: usize,
    /// Initial relative tolerance of the inner linear solve.
    pub inner_tol: T,
    /// Tightest inner tolerance, reached near convergence.
    pub inner_tol_min: T,
    pub max_cg_iters: usize,
    /// Damping increases tried after a conjugate gradient breakdown.
    pub cg_retries: usize,
    /// Stop when the largest gradient component falls below this.
    pub g_tol: T,
    /// Stop when an accepted step lowers the objective by less than this fraction.
    pub rel_tol: T,
    /// Give up once the damping exceeds this.
    pub max_damping: T,
}

impl<T: Real> Default for TrustRegionConfig<T> {
    fn default() -> Self {
        TrustRegionConfig {
            initial_damping: T::lit(1e-3),
            damping_up: T::lit(2.0),
            damping_down: T::lit(3.0),
            accept_threshold: T::zero(),
            max_iters: 100,
            inner_tol: T::lit(1e-2),
            inner_tol_min: T::lit(1e-6),
            max_cg_iters: 25,
            cg_retries: 5,
            g_tol: T::lit(1e-10),
            rel_tol: T::lit(1e-9),
            max_damping: T::lit(1e16),
        }
    }
}

impl<T: Real> TrustRegionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_damping > T::zero()) {
            return Err(Error::Config("initial damping must be positive".into()));
        }
        if !(self.damping_up > T::one() && self.damping_down > T::one()) {
            return Err(Error::Config("damping factors must exceed 1".into()));
        }
        if !(self.inner_tol > T::zero() && self.inner_tol_min > T::zero()) {
            return Err(Error::Config("inner tolerances must be positive".into()));
        }
        if self.max_cg_iters == 0 {
            return Err(Error::Config("max_cg_iters must be positive".into()));
        }
        Ok(())
    }
}

/// One LM iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord<T> {
    pub iter: usize,
    /// Objective after the iteration.
    pub objective: T,
    pub grad_norm: T,
    /// Damping used for the step.
    pub lambda_lm: T,
    pub rho: T,
    pub accepted: bool,
    pub cg_iters: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No residual blocks.
    Empty,
    Gradient,
    RelativeDecrease,
    MaxIterations,
    DampingLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LmStats<T> {
    pub records: Vec<IterationRecord<T>>,
    pub accepted_steps: usize,
    pub stop: StopReason,
    pub initial_objective: T,
    pub final_objective: T,
}

impl<T> LmStats<T> {
    pub fn converged(&self) -> bool {
        matches!(self.stop, StopReason::Empty | StopReason::Gradient | StopReason::RelativeDecrease)
    }
}

/// Minimizes the tangent objective of `system` starting from `lines`.
///
/// Steps solve `(J^T J + lambda diag(J^T J)) delta = -J^T r` inexactly and
/// are accepted only when the exact objective decreases, so the returned
/// objective never exceeds the initial one. Sites without blocks are returned
/// unchanged.
pub fn lm_solve<T: Real, const D: usize>(
    system: &ResidualSystem<'_, T, D>,
    lines: &[TangentLine<T, D>],
    config: &TrustRegionConfig<T>,
) -> Result<(Vec<TangentLine<T, D>>, LmStats<T>)> {
    config.validate()?;
    system.problem().check_lines(lines)?;
    let mut lines = lines.to_vec();
    let mut objective = system.true_objective(&lines);
    let mut stats = LmStats {
        records: Vec::new(),
        accepted_steps: 0,
        stop: StopReason::MaxIterations,
        initial_objective: objective,
        final_objective: objective,
    };
    if system.is_empty() {
        stats.stop = StopReason::Empty;
        return Ok((lines, stats));
    }
    let active: Vec<bool> = (0..lines.len()).map(|i| system.is_active(i)).collect();
    let mut lin = system.linearize(&lines);
    let mut lambda = config.initial_damping;
    let zero_step = vec![T::zero(); lin.n_params()];
    if !objective.is_finite() {
        lin.residuals(&zero_step)?;
        return Err(Error::NonFinite { block: 0 });
    }

    for iter in 0..config.max_iters {
        let ne = lin.normal_equations()?;
        debug_assert!(
            !exact_model(system) || {
                let tol = T::epsilon().sqrt() * T::lit(1e-2);
                (ne.objective - objective).abs() <= tol * (T::one() + objective.abs())
            },
            "sum of squared residuals {} differs from objective {}",
            ne.objective,
            objective
        );
        let grad_norm = ne.grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
        if grad_norm < config.g_tol {
            stats.stop = StopReason::Gradient;
            break;
        }
        let rhs: Vec<T> = ne.grad.iter().map(|&g| -g).collect();
        // Forcing term: solve more accurately as the gradient vanishes.
        let inner_tol = grad_norm.max(config.inner_tol_min).min(config.inner_tol);
        let mut retries = 0;
        let outcome = loop {
            match DampedOperator::new(&ne, &active, lambda).solve(&rhs, inner_tol, config.max_cg_iters) {
                Ok(out) => break out,
                Err(_) if retries < config.cg_retries => {
                    retries += 1;
                    lambda = lambda * T::lit(10.0);
                    log::debug!("CG breakdown, damping raised to {lambda}");
                }
                Err(_) => return Err(Error::CgBreakdown { retries }),
            }
        };
        let step = outcome.step;
        // Model decrease: -(2 g.d + d^T H d).
        let mut h_step = vec![T::zero(); step.len()];
        DampedOperator::new(&ne, &active, T::zero()).apply(&step, &mut h_step);
        let g_dot: T = ne.grad.iter().zip(&step).map(|(&g, &d)| g * d).sum();
        let curv: T = step.iter().zip(&h_step).map(|(&d, &h)| d * h).sum();
        let predicted = -(g_dot + g_dot + curv);

        if !(predicted > T::epsilon() * objective.abs()) {
            stats.records.push(IterationRecord {
                iter,
                objective,
                grad_norm,
                lambda_lm: lambda,
                rho: T::zero(),
                accepted: false,
                cg_iters: outcome.iterations,
            });
            stats.stop = StopReason::RelativeDecrease;
            break;
        }

        let trial = lin.lines_at(&step);
        let trial_objective = system.true_objective(&trial);
        let actual = objective - trial_objective;
        let rho = actual / predicted;
        let accepted = trial_objective.is_finite() && actual > T::zero() && rho > config.accept_threshold;
        stats.records.push(IterationRecord {
            iter,
            objective: if accepted { trial_objective } else { objective },
            grad_norm,
            lambda_lm: lambda,
            rho: if rho.is_finite() { rho } else { T::neg_infinity() },
            accepted,
            cg_iters: outcome.iterations,
        });
        if accepted {
            let rel = actual / objective.abs().max(T::min_positive_value());
            lines = trial;
            objective = trial_objective;
            stats.accepted_steps += 1;
            lin = system.linearize(&lines);
            let two = T::lit(2.0);
            let shrink = T::one() - (two * rho - T::one()).powi(3);
            lambda = (lambda * shrink.max(T::one() / config.damping_down)).max(T::lit(1e-12));
            if rel < config.rel_tol {
                stats.stop = StopReason::RelativeDecrease;
                break;
            }
        } else {
            lambda = lambda * config.damping_up;
            if lambda > config.max_damping {
                stats.stop = StopReason::DampingLimit;
                break;
            }
        }
    }
    stats.final_objective = objective;
    log::debug!(
        "LM: {} iterations, {} accepted, objective {} -> {} ({:?})",
        stats.records.len(),
        stats.accepted_steps,
        stats.initial_objective,
        objective,
        stats.stop
    );
    Ok((lines, stats))
}

/// Whether the sum of squared residuals equals the exact objective (no reweighting).
fn exact_model<T: Real, const D: usize>(system: &ResidualSystem<'_, T, D>) -> bool {
    let spec = &system.problem().spec;
    let reweighted_align = spec.beta > T::zero() && spec.alignment_power == crate::energy::AlignmentPower::One;
    spec.curvature.kind == crate::geometry::CurvatureKind::Squared && !reweighted_align
}
