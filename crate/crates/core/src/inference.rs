//! Mean-field inference over indicators, alternated with tangent solves.
//!
//! At fixed tangents the marginals minimize the variational free energy
//! `E_q[E] - sum_i H(q_i)` one coordinate at a time; at fixed marginals the
//! tangents minimize the expected energy. Both half-steps lower the free
//! energy, which is therefore the quantity used to stop the outer loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bcd::x_step_with;
use crate::energy::{free_energy, Labeling, Potentials, Problem};
use crate::error::{Error, Result};
use crate::geometry::TangentLine;
use crate::scalar::{sigmoid, Real};
use crate::solver::{solve_tangents, LmStats, TrustRegionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule<T> {
    /// In-place updates in site order; every update lowers the free energy.
    GaussSeidel,
    /// Simultaneous damped updates `q <- (1 - d) q + d sigmoid(-h)`.
    Jacobi { damping: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct MeanFieldConfig<T> {
    pub tol: T,
    pub max_sweeps: usize,
    pub schedule: Schedule<T>,
}

impl<T: Real> Default for MeanFieldConfig<T> {
    fn default() -> Self {
        MeanFieldConfig { tol: T::lit(1e-6), max_sweeps: 100, schedule: Schedule::GaussSeidel }
    }
}

/// How the indicator half-step is performed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorUpdate {
    MeanField,
    /// Binary marginals updated by the hard labeling step.
    Degenerate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct InferenceConfig<T> {
    pub mean_field: MeanFieldConfig<T>,
    pub trust_region: TrustRegionConfig<T>,
    /// Stop when an outer iteration lowers the free energy by less than this fraction.
    pub outer_tol: T,
    pub max_outer: usize,
    pub update: IndicatorUpdate,
    /// Starting marginals; defaults to the unary initialization.
    pub initial_q: Option<Vec<T>>,
}

impl<T: Real> Default for InferenceConfig<T> {
    fn default() -> Self {
        InferenceConfig {
            mean_field: MeanFieldConfig::default(),
            trust_region: TrustRegionConfig { max_iters: 30, ..TrustRegionConfig::default() },
            outer_tol: T::lit(1e-6),
            max_outer: 50,
            update: IndicatorUpdate::MeanField,
            initial_q: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    L,
    Q,
}

/// One half-step of the outer loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRecord<T> {
    pub outer: usize,
    pub phase: Phase,
    pub expected_energy: T,
    /// Negative free energy (evidence lower bound up to a constant).
    pub elbo: T,
    pub max_delta: T,
    pub accepted_steps: usize,
}

#[derive(Clone, Debug)]
pub struct MeanFieldResult<T> {
    pub q: Vec<T>,
    pub sweeps: usize,
    pub converged: bool,
    pub max_delta: T,
    /// Free energy before the first sweep and after each sweep.
    pub free_energy: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct InferenceState<T, const D: usize> {
    pub lines: Vec<TangentLine<T, D>>,
    pub q: Vec<T>,
    pub trace: Vec<TraceRecord<T>>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Solver statistics of each tangent half-step.
    pub lm: Vec<LmStats<T>>,
    /// Mean-field free energies of each indicator half-step.
    pub sweeps: Vec<Vec<T>>,
}

impl<T: Real, const D: usize> InferenceState<T, D> {
    /// Sites with marginal at least one half.
    pub fn rounded(&self) -> Labeling {
        Labeling::from_marginals(&self.q, T::lit(0.5))
    }
}

/// `q_i = sigmoid(-psi_i)` with unary potentials at the initial tangents.
pub fn init_marginals<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>]) -> Vec<T> {
    let (spec, sites) = (&problem.spec, &problem.sites);
    (0..sites.len())
        .into_par_iter()
        .map(|i| sigmoid(-crate::energy::unary_potential(spec, sites, &lines[i], i)))
        .collect()
}

/// One pass of mean-field updates over all sites; returns the largest change.
pub fn sweep<T: Real>(pot: &Potentials<T>, graph: &crate::graph::NeighborGraph<T>, q: &mut [T], schedule: Schedule<T>) -> T {
    match schedule {
        Schedule::GaussSeidel => {
            let mut delta = T::zero();
            for i in 0..q.len() {
                let next = sigmoid(-pot.field(graph, q, i));
                delta = delta.max((next - q[i]).abs());
                q[i] = next;
            }
            delta
        }
        Schedule::Jacobi { damping } => {
            let old = q.to_vec();
            let next: Vec<T> = (0..q.len())
                .into_par_iter()
                .map(|i| (T::one() - damping) * old[i] + damping * sigmoid(-pot.field(graph, &old, i)))
                .collect();
            let mut delta = T::zero();
            for (qi, ni) in q.iter_mut().zip(next) {
                delta = delta.max((ni - *qi).abs());
                *qi = ni;
            }
            delta
        }
    }
}

/// One Gauss-Seidel pass at tangents `lines`.
pub fn mean_field_sweep<T: Real, const D: usize>(
    problem: &Problem<T, D>,
    lines: &[TangentLine<T, D>],
    q: &[T],
) -> (Vec<T>, T) {
    let pot = Potentials::compute(problem, lines);
    let mut next = q.to_vec();
    let delta = sweep(&pot, &problem.graph, &mut next, Schedule::GaussSeidel);
    (next, delta)
}

/// Sweeps until the largest change drops below `config.tol`.
pub fn run_mean_field_with<T: Real>(
    pot: &Potentials<T>,
    graph: &crate::graph::NeighborGraph<T>,
    q0: &[T],
    config: &MeanFieldConfig<T>,
) -> MeanFieldResult<T> {
    let mut q = q0.to_vec();
    let mut free = vec![free_energy(pot.expected_energy(graph, &q), &q)];
    let mut delta = T::infinity();
    let mut sweeps = 0;
    while sweeps < config.max_sweeps {
        delta = sweep(pot, graph, &mut q, config.schedule);
        sweeps += 1;
        free.push(free_energy(pot.expected_energy(graph, &q), &q));
        if delta < config.tol {
            break;
        }
    }
    MeanFieldResult { q, sweeps, converged: delta < config.tol, max_delta: delta, free_energy: free }
}

pub fn run_mean_field<T: Real, const D: usize>(
    problem: &Problem<T, D>,
    lines: &[TangentLine<T, D>],
    q0: &[T],
    config: &MeanFieldConfig<T>,
) -> MeanFieldResult<T> {
    run_mean_field_with(&Potentials::compute(problem, lines), &problem.graph, q0, config)
}

/// Alternates tangent solves and indicator updates from tangents `lines0`.
pub fn run_inference<T: Real, const D: usize>(
    problem: &Problem<T, D>,
    lines0: &[TangentLine<T, D>],
    config: &InferenceConfig<T>,
) -> Result<InferenceState<T, D>> {
    problem.check_lines(lines0)?;
    config.trust_region.validate()?;
    if !(config.mean_field.tol > T::zero()) {
        return Err(Error::Config("mean-field tolerance must be positive".into()));
    }
    let n = problem.n_sites();
    let mut q = match &config.initial_q {
        Some(q) if q.len() != n => return Err(Error::Input(format!("{} initial marginals for {n} sites", q.len()))),
        Some(q) => q.clone(),
        None => init_marginals(problem, lines0),
    };
    if config.update == IndicatorUpdate::Degenerate {
        q = Labeling::from_marginals(&q, T::lit(0.5)).to_marginals();
    }
    let mut state = InferenceState {
        lines: lines0.to_vec(),
        q: Vec::new(),
        trace: Vec::new(),
        outer_iterations: 0,
        converged: false,
        lm: Vec::new(),
        sweeps: Vec::new(),
    };
    let mut prev_free = free_energy(Potentials::compute(problem, lines0).expected_energy(&problem.graph, &q), &q);

    for outer in 0..config.max_outer {
        let (lines, stats) =
            solve_tangents(problem, &state.lines, &q, &config.trust_region).map_err(|e| e.at_iteration(outer))?;
        state.lines = lines;
        let pot = Potentials::compute(problem, &state.lines);
        let expected = pot.expected_energy(&problem.graph, &q);
        state.trace.push(TraceRecord {
            outer,
            phase: Phase::L,
            expected_energy: expected,
            elbo: -free_energy(expected, &q),
            max_delta: T::zero(),
            accepted_steps: stats.accepted_steps,
        });
        state.lm.push(stats);

        let max_delta = match config.update {
            IndicatorUpdate::MeanField => {
                let res = run_mean_field_with(&pot, &problem.graph, &q, &config.mean_field);
                if !res.converged {
                    log::debug!("outer {outer}: mean field stopped after {} sweeps (delta {})", res.sweeps, res.max_delta);
                }
                q = res.q;
                state.sweeps.push(res.free_energy);
                res.max_delta
            }
            IndicatorUpdate::Degenerate => {
                let x = Labeling::from_marginals(&q, T::lit(0.5));
                let next = x_step_with(&pot, &problem.graph, &x);
                let changed = next.0.iter().zip(&x.0).any(|(a, b)| a != b);
                q = next.to_marginals();
                let free = free_energy(pot.expected_energy(&problem.graph, &q), &q);
                state.sweeps.push(vec![free]);
                if changed {
                    T::one()
                } else {
                    T::zero()
                }
            }
        };
        let expected = pot.expected_energy(&problem.graph, &q);
        let free = free_energy(expected, &q);
        state.trace.push(TraceRecord {
            outer,
            phase: Phase::Q,
            expected_energy: expected,
            elbo: -free,
            max_delta,
            accepted_steps: 0,
        });
        state.outer_iterations = outer + 1;
        log::debug!("outer {outer}: expected energy {expected}, free energy {free}");
        let rel = (prev_free - free) / prev_free.abs().max(T::min_positive_value());
        prev_free = free;
        if rel < config.outer_tol {
            state.converged = true;
            break;
        }
    }
    state.q = q;
    Ok(state)
}
