use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thinline::bcd::{run_bcd, BcdConfig};
use thinline::energy::{expected_energy, tangent_objective, total_energy, Potentials, ProblemSpec, SiteSet};
use thinline::graph::{build_grid_2d, build_grid_3d, build_knn, NeighborGraph};
use thinline::inference::{init_marginals, run_inference, run_mean_field, InferenceConfig, MeanFieldConfig};
use thinline::pipelines::{detect_edges_2d, subpixel_mask, EdgeParams};
use thinline::raster::Image;
use thinline::scalar::sigmoid;
use thinline::solver::{solve_tangents, TrustRegionConfig};
use thinline::{CurvatureTerm, Labeling, Problem, TangentLine};

fn random_instance(seed: u64, w: usize, h: usize, spec: ProblemSpec<f64>) -> (Problem<f64, 2>, Vec<TangentLine<f64, 2>>) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = w * h;
    let positions: Vec<[f64; 2]> = (0..n).map(|i| [(i % w) as f64, (i / w) as f64]).collect();
    let lambdas = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let lines = positions
        .iter()
        .map(|p| {
            let a = r.random_range(0.0..std::f64::consts::PI);
            TangentLine::from_angle([p[0] + r.random_range(-0.4..0.4), p[1] + r.random_range(-0.4..0.4)], a)
        })
        .collect();
    let problem = Problem::new(spec, SiteSet::new(positions, lambdas), build_grid_2d(w, h).unwrap()).unwrap();
    (problem, lines)
}

fn assert_consistent(g: &NeighborGraph<f64>) {
    for (k, &(i, j)) in g.pairs().iter().enumerate() {
        assert!(i < j);
        assert!(g.neighbors(i).iter().any(|nb| nb.site == j && nb.pair == k));
        assert!(g.neighbors(j).iter().any(|nb| nb.site == i && nb.pair == k));
    }
    for i in 0..g.n_sites() {
        for nb in g.neighbors(i) {
            let (a, b) = g.pairs()[nb.pair];
            assert!((a, b) == (i, nb.site) || (a, b) == (nb.site, i));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masked_grids_are_undirected(bits in proptest::collection::vec(any::<bool>(), 27)) {
        prop_assume!(bits.iter().any(|&b| b));
        let g = build_grid_3d::<f64>(3, 3, 3, Some(&bits)).unwrap();
        assert_consistent(&g.graph);
        let again = build_grid_3d::<f64>(3, 3, 3, Some(&bits)).unwrap();
        prop_assert_eq!(g.graph.pairs(), again.graph.pairs());
        prop_assert_eq!(g.voxels, again.voxels);
    }

    #[test]
    fn knn_graphs_are_undirected(pts in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 6..30), k in 1usize..5) {
        let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
        prop_assume!(k < pts.len());
        if let Ok(g) = build_knn(&pts, k) {
            assert_consistent(&g);
        }
    }

    #[test]
    fn mean_field_lowers_free_energy_and_reaches_a_fixed_point(seed in 0u64..10_000) {
        let (problem, lines) = random_instance(seed, 4, 3, ProblemSpec::edges());
        let q0 = init_marginals(&problem, &lines);
        let config = MeanFieldConfig::default();
        let res = run_mean_field(&problem, &lines, &q0, &config);
        for w in res.free_energy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        if res.converged {
            let pot = Potentials::compute(&problem, &lines);
            for i in 0..problem.n_sites() {
                let target = sigmoid(-pot.field(&problem.graph, &res.q, i));
                prop_assert!((res.q[i] - target).abs() < 10.0 * config.tol);
            }
        }
    }

    #[test]
    fn accepted_steps_strictly_lower_the_tangent_objective(seed in 0u64..10_000, abs in any::<bool>()) {
        let mut spec = ProblemSpec::edges();
        if abs {
            spec.curvature = CurvatureTerm::absolute(0.1);
        }
        let (problem, lines) = random_instance(seed, 4, 3, spec);
        let q = init_marginals(&problem, &lines);
        let config = TrustRegionConfig { max_iters: 15, ..Default::default() };
        let (out, stats) = solve_tangents(&problem, &lines, &q, &config).unwrap();
        let mut prev = stats.initial_objective;
        for r in &stats.records {
            if r.accepted {
                prop_assert!(r.objective < prev);
                prev = r.objective;
            } else {
                prop_assert_eq!(r.objective, prev);
            }
        }
        let direct = tangent_objective(&problem, &out, &q);
        prop_assert!((direct - stats.final_objective).abs() <= 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn bcd_energy_never_increases(seed in 0u64..10_000) {
        let (problem, lines) = random_instance(seed, 3, 3, ProblemSpec::edges());
        let x0 = Labeling::from_marginals(&init_marginals(&problem, &lines), 0.5);
        let config = BcdConfig { max_outer: 4, trust_region: TrustRegionConfig { max_iters: 10, ..Default::default() }, ..Default::default() };
        let state = run_bcd(&problem, &lines, &x0, &config).unwrap();
        for w in state.energy.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        let last = total_energy(&problem, &state.lines, &state.x);
        prop_assert!((last - state.energy.last().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn mask_never_has_more_cells_than_qualifying_sites(
        sites in proptest::collection::vec((0.0..8.0f64, 0.0..6.0f64, 0.0..3.2f64, 0.0..1.0f64), 1..40),
        q_min in 0.0..1.0f64,
    ) {
        let positions: Vec<[f64; 2]> = sites.iter().map(|s| [s.0, s.1]).collect();
        let lines: Vec<TangentLine<f64, 2>> = sites.iter().map(|s| TangentLine::from_angle([s.0, s.1], s.2)).collect();
        let q: Vec<f64> = sites.iter().map(|s| s.3).collect();
        let mask = subpixel_mask(&lines, &positions, &q, 8, 6, 1, q_min).unwrap();
        let nonzero = mask.image.data.iter().filter(|&&v| v > 0.0).count();
        let qualifying = q.iter().filter(|&&v| v >= q_min).count();
        prop_assert!(nonzero <= qualifying);
        prop_assert!(mask.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn point_cloud_solve_minimizes_the_fitting_energy() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<[f64; 2]> =
        (0..24).map(|k| [k as f64, 0.02 * (k as f64 - 12.0).powi(2) + r.random_range(-0.2..0.2)]).collect();
    let graph = build_knn(&pts, 2).unwrap();
    let problem =
        Problem::new(ProblemSpec::point_cloud(1.0), SiteSet::new(pts.clone(), vec![0.0; pts.len()]), graph).unwrap();
    let lines0: Vec<_> = pts.iter().map(|&p| TangentLine::new(p, [1.0, 0.0])).collect();
    let ones = vec![1.0; pts.len()];
    let (lines, stats) = solve_tangents(&problem, &lines0, &ones, &TrustRegionConfig::default()).unwrap();
    let all = Labeling::ones(pts.len());
    let e0 = total_energy(&problem, &lines0, &all);
    let e1 = total_energy(&problem, &lines, &all);
    assert!((e1 - stats.final_objective).abs() < 1e-9 * (1.0 + e1.abs()));
    assert!((e0 - stats.initial_objective).abs() < 1e-9 * (1.0 + e0.abs()));
    assert!(e1 < e0);
    assert!((expected_energy(&problem, &lines, &ones) - e1).abs() < 1e-12 * (1.0 + e1.abs()));
}

#[test]
fn edge_detection_is_deterministic_and_tiered() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let img = Image::from_fn(14, 10, |x, y| if 2 * x + y < 16 { 40.0 } else { 200.0 } + r.random_range(-5.0..5.0));
    let a = detect_edges_2d(&img, &EdgeParams::default()).unwrap();
    let b = detect_edges_2d(&img, &EdgeParams::default()).unwrap();
    let bits = |q: &[f64]| q.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.state.q), bits(&b.state.q));
    assert_eq!(bits(&a.mask.image.data), bits(&b.mask.image.data));
    for (la, lb) in a.state.lines.iter().zip(&b.state.lines) {
        assert_eq!(la, lb);
    }
    let strong = a.state.q.iter().filter(|&&q| q >= 0.5).count();
    let weak = a.state.q.iter().filter(|&&q| q >= 0.25).count();
    assert!(strong > 0 && strong <= weak);
}

#[test]
fn inference_trace_descends_on_random_instances() {
    for seed in 0..8 {
        let (problem, lines) = random_instance(seed, 5, 4, ProblemSpec::edges());
        let config = InferenceConfig { max_outer: 6, ..Default::default() };
        let state = run_inference(&problem, &lines, &config).unwrap();
        let free: Vec<f64> = state.trace.iter().map(|t| -t.elbo).collect();
        for w in free.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        for (k, lm) in state.lm.iter().enumerate() {
            let mut prev = lm.initial_objective;
            for r in lm.records.iter().filter(|r| r.accepted) {
                assert!(r.objective < prev, "seed {seed} outer {k}");
                prev = r.objective;
            }
        }
    }
}
