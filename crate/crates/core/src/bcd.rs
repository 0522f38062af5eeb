//! Block-coordinate descent over tangents and hard indicators.
//!
//! Tangents are solved with the active set fixed, then the labeling is
//! re-optimized with the tangents fixed. Tangents of inactive sites never move,
//! which is what makes this baseline prone to disconnected local minima.

use serde::{Deserialize, Serialize};

use crate::energy::{Labeling, Potentials, Problem};
use crate::error::{Error, Result};
use crate::geometry::TangentLine;
use crate::graph::NeighborGraph;
use crate::inference::{Phase, TraceRecord};
use crate::scalar::Real;
use crate::solver::{solve_tangents, TrustRegionConfig};

/// Largest instance solved by enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 20;

/// `sum w_ij psi_ij x_i x_j + sum psi_i x_i`
pub fn labeling_energy<T: Real>(pot: &Potentials<T>, graph: &NeighborGraph<T>, x: &Labeling) -> T {
    pot.expected_energy(graph, &x.to_marginals::<T>())
}

/// Exact minimizer by Gray-code enumeration of all `2^n` labelings.
/// Ties keep the first labeling found; `n` must not exceed [`EXHAUSTIVE_LIMIT`].
pub fn exhaustive<T: Real>(pot: &Potentials<T>, graph: &NeighborGraph<T>) -> Labeling {
    let n = pot.unary.len();
    assert!(n <= EXHAUSTIVE_LIMIT, "exhaustive search limited to {EXHAUSTIVE_LIMIT} sites");
    let mut x = vec![false; n];
    let mut energy = T::zero();
    let mut best = T::zero();
    let mut best_x = x.clone();
    for step in 1u64..(1u64 << n) {
        let k = step.trailing_zeros() as usize;
        // Energy change of flipping k given the current neighbors.
        let mut h = pot.unary[k];
        for nb in graph.neighbors(k) {
            if x[nb.site] {
                h = h + graph.weight(nb.pair) * pot.pairwise[nb.pair];
            }
        }
        if x[k] {
            energy = energy - h;
        } else {
            energy = energy + h;
        }
        x[k] = !x[k];
        if energy < best {
            best = energy;
            best_x.copy_from_slice(&x);
        }
    }
    Labeling(best_x)
}

/// Iterated conditional modes from `x0`: single-site flips in site order
/// until no flip lowers the energy.
pub fn icm<T: Real>(pot: &Potentials<T>, graph: &NeighborGraph<T>, x0: &Labeling) -> Labeling {
    let mut x = x0.0.clone();
    loop {
        let mut changed = false;
        for i in 0..x.len() {
            let mut h = pot.unary[i];
            for nb in graph.neighbors(i) {
                if x[nb.site] {
                    h = h + graph.weight(nb.pair) * pot.pairwise[nb.pair];
                }
            }
            // Switching on costs h, switching off saves it.
            let on = h < T::zero();
            if on != x[i] && h != T::zero() {
                x[i] = on;
                changed = true;
            }
        }
        if !changed {
            return Labeling(x);
        }
    }
}

/// Labeling step on precomputed potentials, warm-started from `x0`. Small
/// instances are solved exactly; the result never has higher energy than `x0`.
pub fn x_step_with<T: Real>(pot: &Potentials<T>, graph: &NeighborGraph<T>, x0: &Labeling) -> Labeling {
    let candidate = if pot.unary.len() <= EXHAUSTIVE_LIMIT { exhaustive(pot, graph) } else { icm(pot, graph, x0) };
    let e0 = labeling_energy(pot, graph, x0);
    let e1 = labeling_energy(pot, graph, &candidate);
    let slack = T::epsilon() * T::lit(64.0) * (T::one() + e0.abs());
    if e1 < e0 - slack {
        candidate
    } else {
        x0.clone()
    }
}

/// Minimizes the energy over labelings at fixed tangents.
pub fn x_step<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>], x0: &Labeling) -> Labeling {
    x_step_with(&Potentials::compute(problem, lines), &problem.graph, x0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct BcdConfig<T> {
    pub trust_region: TrustRegionConfig<T>,
    pub max_outer: usize,
    /// Stop once the labeling is unchanged and the tangent step lowered the
    /// energy by less than this fraction.
    pub rel_tol: T,
}

impl<T: Real> Default for BcdConfig<T> {
    fn default() -> Self {
        BcdConfig { trust_region: TrustRegionConfig { max_iters: 30, ..TrustRegionConfig::default() }, max_outer: 50, rel_tol: T::lit(1e-9) }
    }
}

#[derive(Clone, Debug)]
pub struct BcdState<T, const D: usize> {
    pub lines: Vec<TangentLine<T, D>>,
    pub x: Labeling,
    pub trace: Vec<TraceRecord<T>>,
    /// Energy at the start and after every half-step.
    pub energy: Vec<T>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Tangents and labeling after each outer iteration.
    pub history: Vec<(Vec<TangentLine<T, D>>, Labeling)>,
}

pub fn run_bcd<T: Real, const D: usize>(
    problem: &Problem<T, D>,
    lines0: &[TangentLine<T, D>],
    x0: &Labeling,
    config: &BcdConfig<T>,
) -> Result<BcdState<T, D>> {
    problem.check_lines(lines0)?;
    if x0.len() != problem.n_sites() {
        return Err(Error::Input(format!("labeling has {} sites, problem has {}", x0.len(), problem.n_sites())));
    }
    let graph = &problem.graph;
    let mut lines = lines0.to_vec();
    let mut x = x0.clone();
    let mut energy = labeling_energy(&Potentials::compute(problem, &lines), graph, &x);
    let mut state = BcdState {
        lines: Vec::new(),
        x: Labeling(Vec::new()),
        trace: Vec::new(),
        energy: vec![energy],
        outer_iterations: 0,
        converged: false,
        history: Vec::new(),
    };
    for outer in 0..config.max_outer {
        let q = x.to_marginals::<T>();
        let (next, stats) =
            solve_tangents(problem, &lines, &q, &config.trust_region).map_err(|e| e.at_iteration(outer))?;
        lines = next;
        let pot = Potentials::compute(problem, &lines);
        let after_l = labeling_energy(&pot, graph, &x);
        let rel = (energy - after_l) / energy.abs().max(T::min_positive_value());
        state.energy.push(after_l);
        state.trace.push(TraceRecord {
            outer,
            phase: Phase::L,
            expected_energy: after_l,
            elbo: -after_l,
            max_delta: T::zero(),
            accepted_steps: stats.accepted_steps,
        });

        let next_x = x_step_with(&pot, graph, &x);
        let changed = next_x != x;
        x = next_x;
        energy = labeling_energy(&pot, graph, &x);
        state.energy.push(energy);
        state.trace.push(TraceRecord {
            outer,
            phase: Phase::Q,
            expected_energy: energy,
            elbo: -energy,
            max_delta: if changed { T::one() } else { T::zero() },
            accepted_steps: 0,
        });
        state.history.push((lines.clone(), x.clone()));
        state.outer_iterations = outer + 1;
        if !changed && rel < config.rel_tol {
            state.converged = true;
            break;
        }
    }
    state.lines = lines;
    state.x = x;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{total_energy, ProblemSpec, SiteSet};
    use crate::graph::build_grid_2d;
    use rand::{Rng, SeedableRng};

    fn random_potentials(n_w: usize, n_h: usize, seed: u64) -> (Potentials<f64>, NeighborGraph<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = build_grid_2d(n_w, n_h).unwrap();
        let pot = Potentials {
            unary: (0..n_w * n_h).map(|_| rng.random_range(-2.0..2.0)).collect(),
            pairwise: (0..g.n_pairs()).map(|_| rng.random_range(-1.5..1.5)).collect(),
        };
        (pot, g)
    }

    /// Direct evaluation of every labeling, independent of the Gray-code walk.
    fn brute_force_min(pot: &Potentials<f64>, g: &NeighborGraph<f64>) -> f64 {
        let n = pot.unary.len();
        (0u32..(1 << n))
            .map(|bits| {
                let on = |i: usize| bits >> i & 1 == 1;
                let mut e = 0.0;
                for (k, &(i, j)) in g.pairs().iter().enumerate() {
                    if on(i) && on(j) {
                        e += g.weight(k) * pot.pairwise[k];
                    }
                }
                for i in 0..n {
                    if on(i) {
                        e += pot.unary[i];
                    }
                }
                e
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn exhaustive_matches_brute_force() {
        for seed in 0..30 {
            let (pot, g) = random_potentials(4, 3, seed);
            let x = exhaustive(&pot, &g);
            let e = labeling_energy(&pot, &g, &x);
            assert!((e - brute_force_min(&pot, &g)).abs() < 1e-12);
        }
    }

    #[test]
    fn icm_is_a_local_minimum_above_the_optimum() {
        for seed in 0..30 {
            let (pot, g) = random_potentials(4, 4, seed);
            let x = icm(&pot, &g, &Labeling::zeros(16));
            let e = labeling_energy(&pot, &g, &x);
            assert!(e >= labeling_energy(&pot, &g, &exhaustive(&pot, &g)) - 1e-12);
            for i in 0..16 {
                let mut y = x.clone();
                y.0[i] = !y.0[i];
                assert!(labeling_energy(&pot, &g, &y) >= e - 1e-12);
            }
        }
    }

    #[test]
    fn positive_unaries_switch_everything_off() {
        let g = build_grid_2d::<f64>(3, 3).unwrap();
        let pot = Potentials { unary: vec![0.5; 9], pairwise: vec![0.3; g.n_pairs()] };
        assert_eq!(x_step_with(&pot, &g, &Labeling::ones(9)), Labeling::zeros(9));
    }

    #[test]
    fn dominant_rewards_switch_everything_on() {
        for seed in 0..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = build_grid_2d::<f64>(4, 3).unwrap();
            let gamma = 0.25;
            let pairwise: Vec<f64> = (0..g.n_pairs()).map(|_| rng.random_range(-gamma..1.0)).collect();
            let bound = pairwise.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let unary = (0..12).map(|i| -(g.degree(i) as f64) * bound - rng.random_range(0.01..1.0)).collect();
            let pot = Potentials { unary, pairwise };
            assert_eq!(exhaustive(&pot, &g), Labeling::ones(12));
        }
    }

    #[test]
    fn x_step_never_raises_energy() {
        for seed in 0..20 {
            let (pot, g) = random_potentials(6, 5, seed);
            let x0 = Labeling((0..30).map(|i| (i * 7 + seed as usize) % 3 == 0).collect());
            let x = x_step_with(&pot, &g, &x0);
            assert!(labeling_energy(&pot, &g, &x) <= labeling_energy(&pot, &g, &x0));
        }
    }

    fn line_problem() -> (Problem<f64, 2>, Vec<TangentLine<f64, 2>>, Labeling) {
        let (w, h) = (10, 3);
        let pos: Vec<[f64; 2]> = (0..w * h).map(|i| [(i % w) as f64, (i / w) as f64]).collect();
        let lambdas = pos.iter().map(|p| if p[1] == 1.0 { -1.0 } else { 1.8 }).collect();
        let lines = pos.iter().map(|p| TangentLine::new(*p, [1.0, 0.0])).collect();
        let x = Labeling(pos.iter().map(|p| p[1] == 1.0).collect());
        let sites = SiteSet::new(pos, lambdas);
        (Problem::new(ProblemSpec::edges(), sites, build_grid_2d(w, h).unwrap()).unwrap(), lines, x)
    }

    #[test]
    fn ground_truth_start_converges_in_one_iteration() {
        let (problem, lines, x) = line_problem();
        let state = run_bcd(&problem, &lines, &x, &BcdConfig::default()).unwrap();
        assert!(state.converged);
        assert_eq!(state.outer_iterations, 1);
        assert_eq!(state.x, x);
    }

    #[test]
    fn energy_never_increases() {
        let (problem, lines, _) = line_problem();
        let lines: Vec<_> = lines.iter().enumerate().map(|(k, l)| TangentLine::from_angle(l.anchor, (k % 5) as f64 * 0.4)).collect();
        let x0 = Labeling((0..30).map(|k| k % 2 == 0).collect());
        let state = run_bcd(&problem, &lines, &x0, &BcdConfig::default()).unwrap();
        for w in state.energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        let e = total_energy(&problem, &state.lines, &state.x);
        assert!((e - state.energy.last().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn degenerate_inference_reproduces_bcd_bit_for_bit() {
        use crate::inference::{run_inference, IndicatorUpdate, InferenceConfig};
        let (problem, lines, _) = line_problem();
        let lines: Vec<_> = lines.iter().enumerate().map(|(k, l)| TangentLine::from_angle(l.anchor, (k % 4) as f64 * 0.3)).collect();
        let x0 = Labeling((0..30).map(|k| k % 3 != 0).collect());
        for max_outer in 1..=4 {
            let bcd = run_bcd(&problem, &lines, &x0, &BcdConfig { max_outer, ..Default::default() }).unwrap();
            let cfg = InferenceConfig {
                max_outer,
                update: IndicatorUpdate::Degenerate,
                initial_q: Some(x0.to_marginals()),
                ..Default::default()
            };
            let vi = run_inference(&problem, &lines, &cfg).unwrap();
            let n = bcd.outer_iterations.min(vi.outer_iterations);
            let (bl, bx) = &bcd.history[n - 1];
            if vi.outer_iterations == n {
                assert_eq!(&vi.lines, bl);
                assert_eq!(&Labeling::from_marginals(&vi.q, 0.5), bx);
            }
            for (a, b) in bcd.trace.iter().zip(&vi.trace).take(2 * n) {
                assert_eq!(a.expected_energy.to_bits(), b.expected_energy.to_bits());
                assert_eq!(a.phase, b.phase);
            }
        }
    }
}
