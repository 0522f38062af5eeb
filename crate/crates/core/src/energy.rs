//! Energy configuration, potentials and the total / expected energies.
//!
//! A problem couples per-site tangents with binary indicators. Each active
//! site pays a unary potential (soft distance constraint, detection cost and
//! optional alignment with a prior direction) and each active neighbor pair
//! pays its curvature minus an optional alignment reward.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    curvature_pair, misalignment, point_line_distance, project_onto_line, CurvatureKind, CurvatureTerm, TangentLine,
};
use crate::graph::NeighborGraph;
use crate::scalar::{bernoulli_entropy, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DistanceMode<T> {
    Euclidean,
    /// No penalty within `tau` of the line.
    Truncated { tau: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SigmaMode<T> {
    /// One noise scale for every site.
    Global { sigma: T },
    /// Site `i` uses `k * scale_i` from [`SiteSet::scales`].
    PerSite { k: T },
}

/// Exponent applied to the misalignment with prior directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum AlignmentPower {
    One,
    Two,
}

impl TryFrom<u8> for AlignmentPower {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            1 => Ok(AlignmentPower::One),
            2 => Ok(AlignmentPower::Two),
            _ => Err(format!("alignment power must be 1 or 2, got {v}")),
        }
    }
}

impl From<AlignmentPower> for u8 {
    fn from(p: AlignmentPower) -> u8 {
        match p {
            AlignmentPower::One => 1,
            AlignmentPower::Two => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Indicators are inferred.
    Detection,
    /// Every site belongs to the curve.
    PointCloud,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec<T> {
    pub curvature: CurvatureTerm<T>,
    pub sigma: SigmaMode<T>,
    /// Reward subtracted from every pairwise potential.
    pub gamma: T,
    /// Weight of the misalignment with prior directions.
    pub beta: T,
    pub distance: DistanceMode<T>,
    pub alignment_power: AlignmentPower,
    pub mode: Mode,
    /// Use observed points instead of their projections in curvature terms.
    #[serde(default)]
    pub raw_anchor_points: bool,
}

impl<T: Real> ProblemSpec<T> {
    /// Edge detection defaults: squared curvature, unit sigma, reward 0.25,
    /// one-pixel truncation.
    pub fn edges() -> Self {
        ProblemSpec {
            curvature: CurvatureTerm::squared(),
            sigma: SigmaMode::Global { sigma: T::one() },
            gamma: T::lit(0.25),
            beta: T::zero(),
            distance: DistanceMode::Truncated { tau: T::one() },
            alignment_power: AlignmentPower::Two,
            mode: Mode::Detection,
            raw_anchor_points: false,
        }
    }

    /// Curve fitting to a point cloud: all sites active, Euclidean distance.
    pub fn point_cloud(sigma: T) -> Self {
        ProblemSpec {
            curvature: CurvatureTerm::squared(),
            sigma: SigmaMode::Global { sigma },
            gamma: T::zero(),
            beta: T::zero(),
            distance: DistanceMode::Euclidean,
            alignment_power: AlignmentPower::Two,
            mode: Mode::PointCloud,
            raw_anchor_points: false,
        }
    }

    /// Vessel center-lines: per-site scales, alignment with filter directions.
    pub fn vessels() -> Self {
        ProblemSpec {
            curvature: CurvatureTerm::squared(),
            sigma: SigmaMode::PerSite { k: T::lit(20.0) },
            gamma: T::zero(),
            beta: T::lit(0.5),
            distance: DistanceMode::Euclidean,
            alignment_power: AlignmentPower::Two,
            mode: Mode::Detection,
            raw_anchor_points: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.sigma {
            SigmaMode::Global { sigma } if !(sigma > T::zero() && sigma.is_finite()) => {
                return bad(format!("sigma must be positive, got {sigma}"))
            }
            SigmaMode::PerSite { k } if !(k > T::zero() && k.is_finite()) => {
                return bad(format!("scale multiplier k must be positive, got {k}"))
            }
            _ => {}
        }
        if let DistanceMode::Truncated { tau } = self.distance {
            if !(tau >= T::zero() && tau.is_finite()) {
                return bad(format!("tau must be non-negative, got {tau}"));
            }
        }
        if !(self.gamma >= T::zero() && self.gamma.is_finite()) {
            return bad(format!("gamma must be non-negative, got {}", self.gamma));
        }
        if !(self.beta >= T::zero() && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative, got {}", self.beta));
        }
        if !(self.curvature.epsilon >= T::zero()) {
            return bad(format!("epsilon must be non-negative, got {}", self.curvature.epsilon));
        }
        if self.mode == Mode::PointCloud && (self.gamma != T::zero() || self.beta != T::zero()) {
            return bad("point-cloud mode requires gamma = beta = 0".into());
        }
        Ok(())
    }
}

/// Observed sites with their unary evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSet<T, const D: usize> {
    pub positions: Vec<[T; D]>,
    /// Detection cost of each site; negative values reward detection.
    pub lambdas: Vec<T>,
    /// Prior directions; their magnitude is the confidence.
    pub priors: Option<Vec<[T; D]>>,
    pub scales: Option<Vec<T>>,
}

impl<T: Real, const D: usize> SiteSet<T, D> {
    pub fn new(positions: Vec<[T; D]>, lambdas: Vec<T>) -> Self {
        SiteSet { positions, lambdas, priors: None, scales: None }
    }

    pub fn with_priors(mut self, priors: Vec<[T; D]>) -> Self {
        self.priors = Some(priors);
        self
    }

    pub fn with_scales(mut self, scales: Vec<T>) -> Self {
        self.scales = Some(scales);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.lambdas.len() != n {
            return Err(Error::Input(format!("{n} positions but {} lambdas", self.lambdas.len())));
        }
        if let Some(g) = &self.priors {
            if g.len() != n {
                return Err(Error::Input(format!("{n} positions but {} priors", g.len())));
            }
        }
        if let Some(s) = &self.scales {
            if s.len() != n {
                return Err(Error::Input(format!("{n} positions but {} scales", s.len())));
            }
            if let Some(i) = s.iter().position(|&v| !(v > T::zero() && v.is_finite())) {
                return Err(Error::Input(format!("scale of site {i} must be positive, got {}", s[i])));
            }
        }
        let finite = |p: &[T; D]| p.iter().all(|v| v.is_finite());
        if let Some(i) = self.positions.iter().position(|p| !finite(p)) {
            return Err(Error::Input(format!("position of site {i} is not finite")));
        }
        if let Some(i) = self.lambdas.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("lambda of site {i} is not finite")));
        }
        Ok(())
    }
}

/// Binary indicators, one per site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labeling(pub Vec<bool>);

impl Labeling {
    pub fn zeros(n: usize) -> Self {
        Labeling(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Labeling(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Indicators as degenerate marginals.
    pub fn to_marginals<T: Real>(&self) -> Vec<T> {
        self.0.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()
    }

    /// Sites with marginal at least `threshold`.
    pub fn from_marginals<T: Real>(q: &[T], threshold: T) -> Self {
        Labeling(q.iter().map(|&v| v >= threshold).collect())
    }
}

/// A validated energy instance.
#[derive(Clone, Debug)]
pub struct Problem<T, const D: usize> {
    pub spec: ProblemSpec<T>,
    pub sites: SiteSet<T, D>,
    pub graph: NeighborGraph<T>,
}

impl<T: Real, const D: usize> Problem<T, D> {
    pub fn new(spec: ProblemSpec<T>, sites: SiteSet<T, D>, graph: NeighborGraph<T>) -> Result<Self> {
        spec.validate()?;
        sites.validate()?;
        if graph.n_sites() != sites.len() {
            return Err(Error::Input(format!("graph has {} sites, site set has {}", graph.n_sites(), sites.len())));
        }
        if matches!(spec.sigma, SigmaMode::PerSite { .. }) && sites.scales.is_none() {
            return Err(Error::Config("per-site sigma requires site scales".into()));
        }
        if spec.beta > T::zero() && sites.priors.is_none() {
            return Err(Error::Config("beta > 0 requires prior directions".into()));
        }
        Ok(Problem { spec, sites, graph })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn check_lines(&self, lines: &[TangentLine<T, D>]) -> Result<()> {
        if lines.len() != self.n_sites() {
            return Err(Error::Input(format!("{} tangents for {} sites", lines.len(), self.n_sites())));
        }
        Ok(())
    }
}

/// Effective noise scale of site `i`.
pub fn sigma_eff<T: Real, const D: usize>(spec: &ProblemSpec<T>, sites: &SiteSet<T, D>, i: usize) -> T {
    match spec.sigma {
        SigmaMode::Global { sigma } => sigma,
        SigmaMode::PerSite { k } => k * sites.scales.as_ref().expect("validated per-site scales")[i],
    }
}

/// The point used for site `i` in curvature terms.
pub fn denoised_point<T: Real, const D: usize>(spec: &ProblemSpec<T>, l: &TangentLine<T, D>, observed: &[T; D]) -> [T; D] {
    if spec.raw_anchor_points {
        *observed
    } else {
        project_onto_line(l, observed)
    }
}

/// Distance of the observed point from the tangent under the configured mode.
pub fn site_distance<T: Real, const D: usize>(spec: &ProblemSpec<T>, l: &TangentLine<T, D>, observed: &[T; D]) -> T {
    let d = point_line_distance(l, observed);
    match spec.distance {
        DistanceMode::Euclidean => d,
        DistanceMode::Truncated { tau } => (d - tau).max(T::zero()),
    }
}

/// Misalignment of site `i`'s tangent with its prior, raised to the configured power.
pub fn alignment_penalty<T: Real, const D: usize>(
    spec: &ProblemSpec<T>,
    sites: &SiteSet<T, D>,
    l: &TangentLine<T, D>,
    i: usize,
) -> T {
    match &sites.priors {
        Some(g) => {
            let m = misalignment(l, &g[i]);
            match spec.alignment_power {
                AlignmentPower::One => m,
                AlignmentPower::Two => m * m,
            }
        }
        None => T::zero(),
    }
}

/// Cost of switching site `i` on given its tangent.
pub fn unary_potential<T: Real, const D: usize>(
    spec: &ProblemSpec<T>,
    sites: &SiteSet<T, D>,
    l_i: &TangentLine<T, D>,
    i: usize,
) -> T {
    let s = sigma_eff(spec, sites, i);
    let d = site_distance(spec, l_i, &sites.positions[i]);
    let mut psi = d * d / (s * s) + sites.lambdas[i];
    if spec.beta > T::zero() {
        psi = psi + spec.beta * alignment_penalty(spec, sites, l_i, i);
    }
    psi
}

/// Curvature between two tangents at their denoised points, minus the reward.
pub fn pairwise_potential<T: Real, const D: usize>(
    spec: &ProblemSpec<T>,
    l_i: &TangentLine<T, D>,
    l_j: &TangentLine<T, D>,
    p_i: &[T; D],
    p_j: &[T; D],
) -> T {
    curvature_pair(l_i, l_j, p_i, p_j, spec.curvature.kind) - spec.gamma
}

/// Curvature of pair `(i, j)` without the reward.
pub fn pair_curvature<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>], i: usize, j: usize) -> T {
    let spec = &problem.spec;
    let pos = &problem.sites.positions;
    let p_i = denoised_point(spec, &lines[i], &pos[i]);
    let p_j = denoised_point(spec, &lines[j], &pos[j]);
    curvature_pair(&lines[i], &lines[j], &p_i, &p_j, spec.curvature.kind)
}

/// Unary and pairwise potential tables at fixed tangents.
#[derive(Clone, Debug, PartialEq)]
pub struct Potentials<T> {
    pub unary: Vec<T>,
    /// One entry per graph pair, excluding the pair weight.
    pub pairwise: Vec<T>,
}

impl<T: Real> Potentials<T> {
    pub fn compute<const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>]) -> Self {
        let (spec, sites) = (&problem.spec, &problem.sites);
        let unary = (0..sites.len())
            .into_par_iter()
            .map(|i| unary_potential(spec, sites, &lines[i], i))
            .collect();
        let pairwise = problem
            .graph
            .pairs()
            .par_iter()
            .map(|&(i, j)| pair_curvature(problem, lines, i, j) - spec.gamma)
            .collect();
        Potentials { unary, pairwise }
    }

    /// `sum w_ij psi_ij q_i q_j + sum psi_i q_i`, summed in pair then site order.
    pub fn expected_energy(&self, graph: &NeighborGraph<T>, q: &[T]) -> T {
        let pairs: T = graph
            .pairs()
            .iter()
            .zip(graph.weights())
            .zip(&self.pairwise)
            .map(|((&(i, j), &w), &psi)| w * psi * q[i] * q[j])
            .sum();
        let sites: T = self.unary.iter().zip(q).map(|(&psi, &qi)| psi * qi).sum();
        pairs + sites
    }

    /// Local field `sum_j w_ij psi_ij q_j + psi_i` acting on site `i`.
    #[inline]
    pub fn field(&self, graph: &NeighborGraph<T>, q: &[T], i: usize) -> T {
        let mut h = self.unary[i];
        for n in graph.neighbors(i) {
            h = h + graph.weight(n.pair) * self.pairwise[n.pair] * q[n.site];
        }
        h
    }
}

/// Energy of tangents `lines` with indicators `x`.
pub fn total_energy<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>], x: &Labeling) -> T {
    let (spec, sites, graph) = (&problem.spec, &problem.sites, &problem.graph);
    let pairs: T = graph
        .pairs()
        .iter()
        .zip(graph.weights())
        .filter(|(&(i, j), _)| x.0[i] && x.0[j])
        .map(|(&(i, j), &w)| w * (pair_curvature(problem, lines, i, j) - spec.gamma))
        .sum();
    let unary: T = (0..sites.len())
        .filter(|&i| x.0[i])
        .map(|i| unary_potential(spec, sites, &lines[i], i))
        .sum();
    pairs + unary
}

/// Expectation of the energy under independent Bernoulli marginals `q`.
pub fn expected_energy<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>], q: &[T]) -> T {
    Potentials::compute(problem, lines).expected_energy(&problem.graph, q)
}

/// Sum of Bernoulli entropies of the marginals.
pub fn entropy<T: Real>(q: &[T]) -> T {
    q.iter().map(|&v| bernoulli_entropy(v)).sum()
}

/// Variational free energy `E_q[E] - H(q)`; its negation is the evidence
/// lower bound up to the log-partition constant.
pub fn free_energy<T: Real>(expected: T, q: &[T]) -> T {
    expected - entropy(q)
}

/// The part of the expected energy that depends on the tangents:
/// `sum w_ij q_i q_j curvature_ij + sum q_i (d_i^2 / sigma_i^2 + beta m_i)`.
pub fn tangent_objective<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>], q: &[T]) -> T {
    let (spec, sites, graph) = (&problem.spec, &problem.sites, &problem.graph);
    let pairs: T = graph
        .pairs()
        .iter()
        .zip(graph.weights())
        .map(|(&(i, j), &w)| {
            let c = w * q[i] * q[j];
            if c > T::zero() {
                c * pair_curvature(problem, lines, i, j)
            } else {
                T::zero()
            }
        })
        .sum();
    let unary: T = (0..sites.len())
        .map(|i| {
            if q[i] > T::zero() {
                let s = sigma_eff(spec, sites, i);
                let d = site_distance(spec, &lines[i], &sites.positions[i]);
                let mut v = d * d / (s * s);
                if spec.beta > T::zero() {
                    v = v + spec.beta * alignment_penalty(spec, sites, &lines[i], i);
                }
                q[i] * v
            } else {
                T::zero()
            }
        })
        .sum();
    pairs + unary
}

/// Whether the curvature term is evaluated in absolute mode.
pub fn is_absolute<T>(spec: &ProblemSpec<T>) -> bool {
    spec.curvature.kind == CurvatureKind::Absolute
}
