//! Vessel center-lines from a precomputed vesselness field.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::energy::{Problem, ProblemSpec, SiteSet};
use crate::error::{Error, Result};
use crate::geometry::TangentLine;
use crate::graph::{build_grid_3d, MaskedGrid};
use crate::inference::{run_inference, InferenceConfig, InferenceState};
use crate::scalar::Real;
use crate::solver::{solve_tangents, LmStats, TrustRegionConfig};

use super::{normalize_by_spread, Likelihood, Normalization};

/// Per-voxel tubularity `v`, tube direction `g` and tube scale `sigma`, in
/// raster order with `x` fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VesselField<T> {
    pub dims: [usize; 3],
    pub v: Vec<T>,
    pub g: Vec<[T; 3]>,
    pub sigma: Vec<T>,
}

impl<T: Real> VesselField<T> {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dims.iter().product::<usize>();
        if n == 0 {
            return Err(Error::Input(format!("volume dimensions must be positive, got {:?}", self.dims)));
        }
        if self.v.len() != n || self.g.len() != n || self.sigma.len() != n {
            return Err(Error::Input(format!(
                "{:?} volume needs {n} voxels, got v {}, g {}, sigma {}",
                self.dims,
                self.v.len(),
                self.g.len(),
                self.sigma.len()
            )));
        }
        if let Some(i) = self.v.iter().position(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::Input(format!("vesselness of voxel {i} must be finite and non-negative")));
        }
        if let Some(i) = self.g.iter().position(|g| !g.iter().all(|c| c.is_finite())) {
            return Err(Error::Input(format!("direction of voxel {i} is not finite")));
        }
        Ok(())
    }

    fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    fn position(&self, i: usize) -> [T; 3] {
        self.coords(i).map(|c| T::lit(c as f64))
    }

    fn initial_line(&self, i: usize) -> TangentLine<T, 3> {
        let g = self.g[i];
        let dir = if g.iter().all(|c| *c == T::zero()) { [T::one(), T::zero(), T::zero()] } else { g };
        TangentLine::new(self.position(i), dir)
    }
}

/// Marks the `ceil(fraction * n)` voxels with the largest values; ties go to
/// the lower index.
pub fn retain_top<T: Real>(v: &[T], fraction: T) -> Result<Vec<bool>> {
    if !(fraction > T::zero() && fraction <= T::one()) {
        return Err(Error::Config(format!("keep fraction must be in (0, 1], got {fraction}")));
    }
    let count = ((fraction * T::lit(v.len() as f64)).ceil().as_f64() as usize).clamp(1, v.len().max(1));
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut mask = vec![false; v.len()];
    for &i in order.iter().take(count) {
        mask[i] = true;
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct VesselParams<T> {
    pub spec: ProblemSpec<T>,
    pub likelihood: Likelihood<T>,
    pub normalization: Normalization,
    /// Fraction of voxels with the highest vesselness kept as sites.
    pub keep_fraction: T,
    pub inference: InferenceConfig<T>,
}

impl<T: Real> Default for VesselParams<T> {
    fn default() -> Self {
        VesselParams {
            spec: ProblemSpec::vessels(),
            likelihood: Likelihood::default(),
            normalization: Normalization::Std,
            keep_fraction: T::lit(0.15),
            inference: InferenceConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VesselDetection<T> {
    pub grid: MaskedGrid<T>,
    pub lambdas: Vec<T>,
    pub initial: Vec<TangentLine<T, 3>>,
    pub state: InferenceState<T, 3>,
}

/// Keeps the strongest voxels, maps normalized vesselness to detection
/// costs, and runs joint inference on the 26-connected retained voxels.
pub fn detect_vessels_3d<T: Real>(field: &VesselField<T>, params: &VesselParams<T>) -> Result<VesselDetection<T>> {
    field.validate()?;
    let mask = retain_top(&field.v, params.keep_fraction)?;
    let [nx, ny, nz] = field.dims;
    let grid = build_grid_3d(nx, ny, nz, Some(&mask))?;
    let div = normalize_by_spread(&field.v, params.normalization);
    let index = |c: &[usize; 3]| (c[2] * ny + c[1]) * nx + c[0];
    let voxel_ids: Vec<usize> = grid.voxels.iter().map(index).collect();
    let lambdas: Vec<T> = voxel_ids
        .iter()
        .map(|&i| params.likelihood.lambda(div.map_or(T::zero(), |d| field.v[i] / d)))
        .collect();
    if let Some(&i) = voxel_ids.iter().find(|&&i| !(field.sigma[i] > T::zero())) {
        return Err(Error::Input(format!("retained voxel {:?} has non-positive scale", field.coords(i))));
    }
    let initial: Vec<TangentLine<T, 3>> = voxel_ids.iter().map(|&i| field.initial_line(i)).collect();
    let sites = SiteSet::new(voxel_ids.iter().map(|&i| field.position(i)).collect(), lambdas.clone())
        .with_scales(voxel_ids.iter().map(|&i| field.sigma[i]).collect())
        .with_priors(voxel_ids.iter().map(|&i| field.g[i]).collect());
    let problem = Problem::new(params.spec, sites, grid.graph.clone())?;
    log::info!("vessel inference on {} voxels, {} pairs", problem.n_sites(), problem.graph.n_pairs());
    let state = run_inference(&problem, &initial, &params.inference)?;
    Ok(VesselDetection { grid, lambdas, initial, state })
}

/// Voxels with `v >= low` that are 26-connected to a voxel with `v >= high`.
pub fn hysteresis<T: Real>(dims: [usize; 3], v: &[T], low: T, high: T) -> Result<Vec<bool>> {
    if !(low <= high) {
        return Err(Error::Config(format!("hysteresis needs low <= high, got {low} > {high}")));
    }
    let [nx, ny, nz] = dims;
    if v.len() != nx * ny * nz {
        return Err(Error::Input(format!("{dims:?} volume needs {} values, got {}", nx * ny * nz, v.len())));
    }
    let mut mask = vec![false; v.len()];
    let mut queue: VecDeque<usize> = (0..v.len()).filter(|&i| v[i] >= high).collect();
    for &i in &queue {
        mask[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (x, y, z) = ((i % nx) as i64, ((i / nx) % ny) as i64, (i / (nx * ny)) as i64);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy, zz) = (x + dx, y + dy, z + dz);
                    if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                        continue;
                    }
                    let j = ((zz as usize) * ny + yy as usize) * nx + xx as usize;
                    if !mask[j] && v[j] >= low {
                        mask[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct RidgeParams<T> {
    pub low: T,
    pub high: T,
    pub spec: ProblemSpec<T>,
    pub trust_region: TrustRegionConfig<T>,
}

impl<T: Real> Default for RidgeParams<T> {
    fn default() -> Self {
        RidgeParams {
            low: T::lit(0.1),
            high: T::lit(0.3),
            spec: ProblemSpec::vessels(),
            trust_region: TrustRegionConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RidgeFit<T> {
    /// Ridge voxels in raster order.
    pub mask: Vec<bool>,
    /// Coordinates of the ridge voxels, in site order.
    pub voxels: Vec<[usize; 3]>,
    pub lines: Vec<TangentLine<T, 3>>,
    pub stats: Option<LmStats<T>>,
}

/// Ridge voxels by hysteresis on vesselness, then one tangent solve with the
/// ridge voxels fixed on and every other voxel off.
pub fn fit_tangents_fixed_q<T: Real>(field: &VesselField<T>, params: &RidgeParams<T>) -> Result<RidgeFit<T>> {
    field.validate()?;
    let mask = hysteresis(field.dims, &field.v, params.low, params.high)?;
    if !mask.iter().any(|&m| m) {
        log::warn!("no voxel reaches the high threshold {}", params.high);
        return Ok(RidgeFit { mask, voxels: Vec::new(), lines: Vec::new(), stats: None });
    }
    let [nx, ny, nz] = field.dims;
    let grid = build_grid_3d::<T>(nx, ny, nz, Some(&mask))?;
    let ids: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if let Some(&i) = ids.iter().find(|&&i| !(field.sigma[i] > T::zero())) {
        return Err(Error::Input(format!("ridge voxel {:?} has non-positive scale", field.coords(i))));
    }
    let initial: Vec<TangentLine<T, 3>> = ids.iter().map(|&i| field.initial_line(i)).collect();
    let sites = SiteSet::new(ids.iter().map(|&i| field.position(i)).collect(), vec![T::zero(); ids.len()])
        .with_scales(ids.iter().map(|&i| field.sigma[i]).collect())
        .with_priors(ids.iter().map(|&i| field.g[i]).collect());
    let problem = Problem::new(params.spec, sites, grid.graph)?;
    let q = vec![T::one(); ids.len()];
    let (lines, stats) = solve_tangents(&problem, &initial, &q, &params.trust_region)?;
    Ok(RidgeFit { mask, voxels: grid.voxels, lines, stats: Some(stats) })
}
