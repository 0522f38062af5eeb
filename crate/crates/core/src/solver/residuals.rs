//! Residual blocks of the tangent subproblem and their dual-number Jacobians.
//!
//! For fixed marginals `q` the tangent-dependent part of the expected energy
//! is a weighted sum of squares:
//!
//! * curvature blocks (one per active pair, `2D` rows):
//!   `c_ij rej(p_j - a_i, t_i) / |p_i - p_j|` and the mirrored term;
//! * distance blocks (one per active site): `sqrt(q_i) / sigma_i` times the
//!   offset of the observed point (`D` rows) or, when truncated, the scalar
//!   `max(0, d - tau)`;
//! * alignment blocks: `sqrt(beta q_i)` times the rejection of the prior
//!   direction from the tangent direction.
//!
//! In absolute-curvature mode the squared curvature rows carry frozen
//! iteratively reweighted least squares weights, and likewise for the
//! unsquared alignment penalty.

use rayon::prelude::*;
use serde::Serialize;

use crate::dual::Dual;
use crate::energy::{sigma_eff, AlignmentPower, DistanceMode, Problem};
use crate::error::{Error, Result};
use crate::geometry::{curvature_pair, misalignment, point_line_distance, CurvatureKind, TangentLine, DENOMINATOR_CLAMP};
use crate::scalar::{cst, lift, Real};
use crate::vector::{norm, norm_sq, rejection, scale, sub};
use num_traits::Float;

use super::params::{params_per_site, Frame};

/// Marginal products (and marginals) below this drop their block.
pub const WEIGHT_CUTOFF: f64 = 1e-12;
/// Range of the absolute-curvature reweighting factors.
pub const ABS_WEIGHT_MIN: f64 = 1e-3;
pub const ABS_WEIGHT_MAX: f64 = 1e3;
/// Offset in the reweighting of the unsquared alignment penalty.
const ALIGN_REWEIGHT_EPS: f64 = 1e-3;
/// Pairs evaluated per parallel batch when assembling normal equations.
const BATCH: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Curvature,
    Distance,
    Alignment,
}

#[derive(Clone, Copy, Debug)]
struct PairBlock<T> {
    i: usize,
    j: usize,
    /// `w_ij q_i q_j`
    base: T,
}

#[derive(Clone, Copy, Debug)]
struct SiteBlock<T> {
    site: usize,
    /// Residual coefficient for distance, `sqrt(q) / sigma`; weight `beta q`
    /// for alignment.
    coef: T,
}

/// Residual values of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock<T> {
    pub id: usize,
    pub kind: BlockKind,
    pub sites: Vec<usize>,
    pub values: Vec<T>,
}

/// Dense Jacobian of one block with respect to its sites' parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianBlock<T> {
    pub id: usize,
    pub kind: BlockKind,
    pub sites: Vec<usize>,
    /// Global parameter index of each column.
    pub columns: Vec<usize>,
    pub rows: usize,
    /// Row-major `rows x columns.len()` values.
    pub values: Vec<T>,
}

/// The weighted least-squares system for one tangent subproblem at fixed marginals.
#[derive(Clone, Debug)]
pub struct ResidualSystem<'a, T, const D: usize> {
    problem: &'a Problem<T, D>,
    q: Vec<T>,
    pairs: Vec<PairBlock<T>>,
    distance: Vec<SiteBlock<T>>,
    alignment: Vec<SiteBlock<T>>,
    active: Vec<bool>,
}

/// Reweighting factors `(|p_i - p_j| + eps) / (dist(l_i, p_j) + eps)` and the
/// mirrored one, clamped to `[ABS_WEIGHT_MIN, ABS_WEIGHT_MAX]`.
pub fn abs_weight_pair<T: Real, const D: usize>(
    l_i: &TangentLine<T, D>,
    l_j: &TangentLine<T, D>,
    p_i: &[T; D],
    p_j: &[T; D],
    epsilon: T,
) -> [T; 2] {
    let chord = norm(&sub(p_i, p_j));
    let weight = |d: T| {
        let w = (chord + epsilon) / (d + epsilon);
        if w.is_nan() {
            T::one()
        } else {
            w.max(T::lit(ABS_WEIGHT_MIN)).min(T::lit(ABS_WEIGHT_MAX))
        }
    };
    [weight(point_line_distance(l_i, p_j)), weight(point_line_distance(l_j, p_i))]
}

/// Per-pair reweighting factors for the absolute-curvature approximation,
/// in graph pair order.
pub fn abs_curvature_weights<T: Real, const D: usize>(
    problem: &Problem<T, D>,
    lines: &[TangentLine<T, D>],
    epsilon: T,
) -> Vec<[T; 2]> {
    let pts = denoised(problem, lines);
    problem
        .graph
        .pairs()
        .iter()
        .map(|&(i, j)| abs_weight_pair(&lines[i], &lines[j], &pts[i], &pts[j], epsilon))
        .collect()
}

fn denoised<T: Real, const D: usize>(problem: &Problem<T, D>, lines: &[TangentLine<T, D>]) -> Vec<[T; D]> {
    lines
        .iter()
        .zip(&problem.sites.positions)
        .map(|(l, p)| crate::energy::denoised_point(&problem.spec, l, p))
        .collect()
}

#[inline]
fn project<S: Float, const D: usize>(l: &TangentLine<S, D>, p: &[S; D], raw: bool) -> [S; D] {
    if raw {
        *p
    } else {
        crate::geometry::project_onto_line(l, p)
    }
}

/// The two curvature residual vectors of a pair.
#[inline]
fn curvature_rows<S: Float, const D: usize>(
    l_i: &TangentLine<S, D>,
    l_j: &TangentLine<S, D>,
    o_i: &[S; D],
    o_j: &[S; D],
    raw: bool,
    coef: [S; 2],
) -> [[S; D]; 2] {
    let p_i = project(l_i, o_i, raw);
    let p_j = project(l_j, o_j, raw);
    let clamp: S = cst(DENOMINATOR_CLAMP);
    let chord = norm_sq(&sub(&p_i, &p_j)).max(clamp * clamp).sqrt();
    [
        scale(&l_i.offset_to(&p_j), coef[0] / chord),
        scale(&l_j.offset_to(&p_i), coef[1] / chord),
    ]
}

#[inline]
fn distance_rows<S: Float, const D: usize>(l: &TangentLine<S, D>, o: &[S; D], tau: Option<S>, coef: S) -> [S; D] {
    let off = l.offset_to(o);
    match tau {
        None => scale(&off, coef),
        Some(tau) => {
            let mut r = [S::zero(); D];
            r[0] = coef * (norm(&off) - tau).max(S::zero());
            r
        }
    }
}

#[inline]
fn alignment_rows<S: Float, const D: usize>(l: &TangentLine<S, D>, g: &[S; D], coef: S) -> [S; D] {
    scale(&rejection(g, &l.direction), coef)
}

fn lift_point<T: Real, S: Float, const D: usize>(p: &[T; D]) -> [S; D] {
    p.map(lift)
}

impl<'a, T: Real, const D: usize> ResidualSystem<'a, T, D> {
    /// Collects the blocks with non-negligible weight for marginals `q`.
    pub fn build(problem: &'a Problem<T, D>, q: &[T]) -> Result<Self> {
        let n = problem.n_sites();
        if q.len() != n {
            return Err(Error::Input(format!("{} marginals for {n} sites", q.len())));
        }
        if let Some(i) = q.iter().position(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::Input(format!("marginal of site {i} outside [0, 1]: {}", q[i])));
        }
        let cutoff = T::lit(WEIGHT_CUTOFF);
        let mut active = vec![false; n];
        let mut pairs = Vec::new();
        for (&(i, j), &w) in problem.graph.pairs().iter().zip(problem.graph.weights()) {
            let base = w * q[i] * q[j];
            if base >= cutoff {
                pairs.push(PairBlock { i, j, base });
                active[i] = true;
                active[j] = true;
            }
        }
        let mut distance = Vec::new();
        let mut alignment = Vec::new();
        let spec = &problem.spec;
        let align = spec.beta > T::zero() && problem.sites.priors.is_some();
        for i in 0..n {
            if q[i] < cutoff {
                continue;
            }
            active[i] = true;
            let s = sigma_eff(spec, &problem.sites, i);
            distance.push(SiteBlock { site: i, coef: q[i].sqrt() / s });
            if align {
                alignment.push(SiteBlock { site: i, coef: spec.beta * q[i] });
            }
        }
        Ok(ResidualSystem { problem, q: q.to_vec(), pairs, distance, alignment, active })
    }

    pub fn problem(&self) -> &Problem<T, D> {
        self.problem
    }

    pub fn marginals(&self) -> &[T] {
        &self.q
    }

    pub fn n_blocks(&self) -> usize {
        self.pairs.len() + self.distance.len() + self.alignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n_blocks() == 0
    }

    /// Whether site `i` has parameters in this system.
    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn n_params(&self) -> usize {
        self.problem.n_sites() * params_per_site(D)
    }

    fn truncation(&self) -> Option<T> {
        match self.problem.spec.distance {
            DistanceMode::Truncated { tau } if tau > T::zero() => Some(tau),
            _ => None,
        }
    }

    fn raw(&self) -> bool {
        self.problem.spec.raw_anchor_points
    }

    /// Exact tangent-dependent energy over the blocks of this system.
    pub fn true_objective(&self, lines: &[TangentLine<T, D>]) -> T {
        let spec = &self.problem.spec;
        let sites = &self.problem.sites;
        let pts = denoised(self.problem, lines);
        let kind = spec.curvature.kind;
        let pairs: T = self
            .pairs
            .iter()
            .map(|b| b.base * curvature_pair(&lines[b.i], &lines[b.j], &pts[b.i], &pts[b.j], kind))
            .sum();
        let tau = self.truncation();
        let dist: T = self
            .distance
            .iter()
            .map(|b| {
                let d = point_line_distance(&lines[b.site], &sites.positions[b.site]);
                let d = match tau {
                    Some(tau) => (d - tau).max(T::zero()),
                    None => d,
                };
                let c = b.coef;
                c * c * d * d
            })
            .sum();
        let align: T = self
            .alignment
            .iter()
            .map(|b| {
                let g = &sites.priors.as_ref().expect("priors")[b.site];
                let m = misalignment(&lines[b.site], g);
                match spec.alignment_power {
                    AlignmentPower::One => b.coef * m,
                    AlignmentPower::Two => b.coef * m * m,
                }
            })
            .sum();
        pairs + dist + align
    }

    /// Freezes the reweighting factors and parameter frames at `lines`.
    pub fn linearize(&self, lines: &[TangentLine<T, D>]) -> Linearization<'_, 'a, T, D> {
        let spec = &self.problem.spec;
        let pts = denoised(self.problem, lines);
        let pair_coefs = self
            .pairs
            .iter()
            .map(|b| match spec.curvature.kind {
                CurvatureKind::Squared => {
                    let c = b.base.sqrt();
                    [c, c]
                }
                CurvatureKind::Absolute => {
                    let w = abs_weight_pair(&lines[b.i], &lines[b.j], &pts[b.i], &pts[b.j], spec.curvature.epsilon);
                    let half = b.base / T::lit(2.0);
                    [(half * w[0]).sqrt(), (half * w[1]).sqrt()]
                }
            })
            .collect();
        let align_coefs = self
            .alignment
            .iter()
            .map(|b| match spec.alignment_power {
                AlignmentPower::Two => b.coef.sqrt(),
                AlignmentPower::One => {
                    let g = &self.problem.sites.priors.as_ref().expect("priors")[b.site];
                    let m = misalignment(&lines[b.site], g);
                    let w = (T::one() / (m + T::lit(ALIGN_REWEIGHT_EPS)))
                        .max(T::lit(ABS_WEIGHT_MIN))
                        .min(T::lit(ABS_WEIGHT_MAX));
                    (b.coef * w / T::lit(2.0)).sqrt()
                }
            })
            .collect();
        Linearization {
            sys: self,
            lines: lines.to_vec(),
            frames: lines.iter().map(Frame::new).collect(),
            pair_coefs,
            align_coefs,
        }
    }
}

/// Block-sparse Gauss-Newton system `J^T J`, `J^T r` and `r^T r`.
#[derive(Clone, Debug)]
pub(crate) struct NormalEquations<T> {
    pub p: usize,
    /// Per-site `p x p` diagonal blocks, row-major.
    pub diag: Vec<T>,
    /// Per-pair `p x p` blocks `J_i^T J_j`, row-major.
    pub off: Vec<T>,
    pub off_sites: Vec<(usize, usize)>,
    pub grad: Vec<T>,
    pub objective: T,
}

struct PairContribution<T, const P: usize> {
    dii: [[T; P]; P],
    djj: [[T; P]; P],
    dij: [[T; P]; P],
    gi: [T; P],
    gj: [T; P],
    obj: T,
}

/// A residual system with frozen weights, frames and denoising, expanded
/// around fixed tangents.
pub struct Linearization<'s, 'a, T, const D: usize> {
    sys: &'s ResidualSystem<'a, T, D>,
    lines: Vec<TangentLine<T, D>>,
    frames: Vec<Frame<T, D>>,
    pair_coefs: Vec<[T; 2]>,
    align_coefs: Vec<T>,
}

impl<T: Real, const D: usize> Linearization<'_, '_, T, D> {
    pub fn lines(&self) -> &[TangentLine<T, D>] {
        &self.lines
    }

    pub fn n_params(&self) -> usize {
        self.sys.n_params()
    }

    /// Tangents after a parameter step; inactive sites are copied unchanged.
    pub fn lines_at(&self, step: &[T]) -> Vec<TangentLine<T, D>> {
        let p = params_per_site(D);
        (0..self.lines.len())
            .map(|i| {
                if self.sys.active[i] {
                    self.frames[i].apply(&step[i * p..(i + 1) * p])
                } else {
                    self.lines[i]
                }
            })
            .collect()
    }

    /// Residual blocks at parameter `step`, curvature blocks first, then
    /// distance, then alignment.
    pub fn residuals(&self, step: &[T]) -> Result<Vec<ResidualBlock<T>>> {
        let lines = self.lines_at(step);
        let sys = self.sys;
        let pos = &sys.problem.sites.positions;
        let (raw, tau) = (sys.raw(), sys.truncation());
        let mut out = Vec::with_capacity(sys.n_blocks());
        for (b, c) in sys.pairs.iter().zip(&self.pair_coefs) {
            let r = curvature_rows(&lines[b.i], &lines[b.j], &pos[b.i], &pos[b.j], raw, *c);
            let values = r[0].iter().chain(r[1].iter()).copied().collect();
            out.push(ResidualBlock { id: out.len(), kind: BlockKind::Curvature, sites: vec![b.i, b.j], values });
        }
        for b in &sys.distance {
            let r = distance_rows(&lines[b.site], &pos[b.site], tau, b.coef);
            let values = if tau.is_some() { vec![r[0]] } else { r.to_vec() };
            out.push(ResidualBlock { id: out.len(), kind: BlockKind::Distance, sites: vec![b.site], values });
        }
        if let Some(priors) = &sys.problem.sites.priors {
            for (b, &c) in sys.alignment.iter().zip(&self.align_coefs) {
                let r = alignment_rows(&lines[b.site], &priors[b.site], c);
                out.push(ResidualBlock { id: out.len(), kind: BlockKind::Alignment, sites: vec![b.site], values: r.to_vec() });
            }
        }
        if let Some(b) = out.iter().find(|b| b.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { block: b.id });
        }
        Ok(out)
    }

    /// Sum of squared residuals at parameter `step` with frozen weights.
    pub fn model_objective(&self, step: &[T]) -> Result<T> {
        Ok(self.residuals(step)?.iter().flat_map(|b| b.values.iter()).map(|&v| v * v).sum())
    }

    /// Jacobian of every block at the expansion point.
    pub fn jacobian(&self) -> Result<Vec<JacobianBlock<T>>> {
        match D {
            2 => self.jacobian_impl::<3, 3, 6>(),
            3 => self.jacobian_impl::<5, 5, 10>(),
            _ => unreachable!("dimension checked by Frame::new"),
        }
    }

    pub(crate) fn normal_equations(&self) -> Result<NormalEquations<T>> {
        match D {
            2 => self.normal_equations_impl::<3, 3, 6>(),
            3 => self.normal_equations_impl::<5, 5, 10>(),
            _ => unreachable!("dimension checked by Frame::new"),
        }
    }

    #[inline]
    fn pair_duals<const P: usize, const N: usize>(&self, k: usize) -> [[Dual<T, N>; D]; 2] {
        let sys = self.sys;
        let b = &sys.pairs[k];
        let pos = &sys.problem.sites.positions;
        let li = self.frames[b.i].dual_line::<P, N>(0);
        let lj = self.frames[b.j].dual_line::<P, N>(P);
        let c = self.pair_coefs[k].map(Dual::constant);
        curvature_rows(&li, &lj, &lift_point(&pos[b.i]), &lift_point(&pos[b.j]), sys.raw(), c)
    }

    #[inline]
    fn distance_duals<const P: usize>(&self, k: usize) -> [Dual<T, P>; D] {
        let sys = self.sys;
        let b = &sys.distance[k];
        let l = self.frames[b.site].dual_line::<P, P>(0);
        let tau = sys.truncation().map(Dual::constant);
        distance_rows(&l, &lift_point(&sys.problem.sites.positions[b.site]), tau, Dual::constant(b.coef))
    }

    #[inline]
    fn alignment_duals<const P: usize>(&self, k: usize) -> [Dual<T, P>; D] {
        let sys = self.sys;
        let b = &sys.alignment[k];
        let l = self.frames[b.site].dual_line::<P, P>(0);
        let g = &sys.problem.sites.priors.as_ref().expect("priors")[b.site];
        alignment_rows(&l, &lift_point(g), Dual::constant(self.align_coefs[k]))
    }

    fn distance_row_count(&self) -> usize {
        if self.sys.truncation().is_some() {
            1
        } else {
            D
        }
    }

    fn jacobian_impl<const P: usize, const N1: usize, const N2: usize>(&self) -> Result<Vec<JacobianBlock<T>>> {
        debug_assert!(P == params_per_site(D) && N1 == P && N2 == 2 * P);
        let sys = self.sys;
        let mut out = Vec::with_capacity(sys.n_blocks());
        let cols = |s: usize| (s * P..(s + 1) * P).collect::<Vec<_>>();
        for k in 0..sys.pairs.len() {
            let rows = self.pair_duals::<P, N2>(k);
            let b = &sys.pairs[k];
            let mut columns = cols(b.i);
            columns.extend(cols(b.j));
            let values = rows.iter().flatten().flat_map(|r| r.eps).collect();
            let id = out.len();
            out.push(JacobianBlock { id, kind: BlockKind::Curvature, sites: vec![b.i, b.j], columns, rows: 2 * D, values });
        }
        let nd = self.distance_row_count();
        for k in 0..sys.distance.len() {
            let rows = self.distance_duals::<P>(k);
            let s = sys.distance[k].site;
            let values = rows[..nd].iter().flat_map(|r| r.eps).collect();
            let id = out.len();
            out.push(JacobianBlock { id, kind: BlockKind::Distance, sites: vec![s], columns: cols(s), rows: nd, values });
        }
        for k in 0..sys.alignment.len() {
            let rows = self.alignment_duals::<P>(k);
            let s = sys.alignment[k].site;
            let values = rows.iter().flat_map(|r| r.eps).collect();
            let id = out.len();
            out.push(JacobianBlock { id, kind: BlockKind::Alignment, sites: vec![s], columns: cols(s), rows: D, values });
        }
        if let Some(b) = out.iter().find(|b| b.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite { block: b.id });
        }
        Ok(out)
    }

    fn normal_equations_impl<const P: usize, const N1: usize, const N2: usize>(&self) -> Result<NormalEquations<T>> {
        debug_assert!(P == params_per_site(D) && N1 == P && N2 == 2 * P);
        let sys = self.sys;
        let n = sys.problem.n_sites();
        let pp = P * P;
        let mut ne = NormalEquations {
            p: P,
            diag: vec![T::zero(); n * pp],
            off: vec![T::zero(); sys.pairs.len() * pp],
            off_sites: sys.pairs.iter().map(|b| (b.i, b.j)).collect(),
            grad: vec![T::zero(); n * P],
            objective: T::zero(),
        };
        let zero_block = [[T::zero(); P]; P];
        for start in (0..sys.pairs.len()).step_by(BATCH) {
            let end = (start + BATCH).min(sys.pairs.len());
            let batch: Vec<(usize, Option<PairContribution<T, P>>)> = (start..end)
                .into_par_iter()
                .map(|k| {
                    let rows = self.pair_duals::<P, N2>(k);
                    let mut c = PairContribution {
                        dii: zero_block,
                        djj: zero_block,
                        dij: zero_block,
                        gi: [T::zero(); P],
                        gj: [T::zero(); P],
                        obj: T::zero(),
                    };
                    for r in rows.iter().flatten() {
                        if !r.re.is_finite() || r.eps.iter().any(|e| !e.is_finite()) {
                            return (k, None);
                        }
                        let (ji, jj) = r.eps.split_at(P);
                        for a in 0..P {
                            for b in 0..P {
                                c.dii[a][b] = c.dii[a][b] + ji[a] * ji[b];
                                c.djj[a][b] = c.djj[a][b] + jj[a] * jj[b];
                                c.dij[a][b] = c.dij[a][b] + ji[a] * jj[b];
                            }
                            c.gi[a] = c.gi[a] + ji[a] * r.re;
                            c.gj[a] = c.gj[a] + jj[a] * r.re;
                        }
                        c.obj = c.obj + r.re * r.re;
                    }
                    (k, Some(c))
                })
                .collect();
            for (k, c) in batch {
                let c = c.ok_or(Error::NonFinite { block: k })?;
                let b = &sys.pairs[k];
                for a in 0..P {
                    for bb in 0..P {
                        ne.diag[b.i * pp + a * P + bb] = ne.diag[b.i * pp + a * P + bb] + c.dii[a][bb];
                        ne.diag[b.j * pp + a * P + bb] = ne.diag[b.j * pp + a * P + bb] + c.djj[a][bb];
                        ne.off[k * pp + a * P + bb] = c.dij[a][bb];
                    }
                    ne.grad[b.i * P + a] = ne.grad[b.i * P + a] + c.gi[a];
                    ne.grad[b.j * P + a] = ne.grad[b.j * P + a] + c.gj[a];
                }
                ne.objective = ne.objective + c.obj;
            }
        }
        let np = sys.pairs.len();
        let mut add_site = |site: usize, id: usize, rows: &[Dual<T, P>]| -> Result<()> {
            for r in rows {
                if !r.re.is_finite() || r.eps.iter().any(|e| !e.is_finite()) {
                    return Err(Error::NonFinite { block: id });
                }
                for a in 0..P {
                    for b in 0..P {
                        ne.diag[site * pp + a * P + b] = ne.diag[site * pp + a * P + b] + r.eps[a] * r.eps[b];
                    }
                    ne.grad[site * P + a] = ne.grad[site * P + a] + r.eps[a] * r.re;
                }
                ne.objective = ne.objective + r.re * r.re;
            }
            Ok(())
        };
        let nd = self.distance_row_count();
        for k in 0..sys.distance.len() {
            let rows = self.distance_duals::<P>(k);
            add_site(sys.distance[k].site, np + k, &rows[..nd])?;
        }
        let na = np + sys.distance.len();
        for k in 0..sys.alignment.len() {
            let rows = self.alignment_duals::<P>(k);
            add_site(sys.alignment[k].site, na + k, &rows)?;
        }
        Ok(ne)
    }
}
