//! Curve fitting to unordered point clouds.

use serde::{Deserialize, Serialize};

use crate::energy::{Problem, ProblemSpec, SiteSet};
use crate::error::{Error, Result};
use crate::geometry::{CurvatureTerm, TangentLine};
use crate::graph::{build_knn, NeighborGraph};
use crate::scalar::Real;
use crate::solver::{solve_tangents, LmStats, TrustRegionConfig};

use super::principal_axis;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct CloudParams<T> {
    /// Noise scale of the samples.
    pub sigma: T,
    pub curvature: CurvatureTerm<T>,
    /// Neighbors per point.
    pub k: usize,
    pub trust_region: TrustRegionConfig<T>,
}

impl<T: Real> Default for CloudParams<T> {
    fn default() -> Self {
        CloudParams { sigma: T::one(), curvature: CurvatureTerm::squared(), k: 4, trust_region: TrustRegionConfig::default() }
    }
}

#[derive(Clone, Debug)]
pub struct CloudFit<T, const D: usize> {
    pub problem: Problem<T, D>,
    pub initial: Vec<TangentLine<T, D>>,
    pub lines: Vec<TangentLine<T, D>>,
    pub stats: LmStats<T>,
}

/// Tangents through each point along the principal axis of the point and its
/// graph neighbors.
pub fn pca_tangents<T: Real, const D: usize>(points: &[[T; D]], graph: &NeighborGraph<T>) -> Vec<TangentLine<T, D>> {
    (0..points.len())
        .map(|i| {
            let members: Vec<usize> = std::iter::once(i).chain(graph.neighbors(i).iter().map(|nb| nb.site)).collect();
            let n = T::lit(members.len() as f64);
            let mut mean = [T::zero(); D];
            for &m in &members {
                for a in 0..D {
                    mean[a] = mean[a] + points[m][a] / n;
                }
            }
            let mut cov = [[T::zero(); D]; D];
            for &m in &members {
                for a in 0..D {
                    for b in 0..D {
                        cov[a][b] = cov[a][b] + (points[m][a] - mean[a]) * (points[m][b] - mean[b]);
                    }
                }
            }
            TangentLine::new(points[i], principal_axis(cov))
        })
        .collect()
}

/// Every point is on the curve: kNN graph, principal-axis initialization and
/// a single tangent solve.
pub fn fit_point_cloud<T: Real, const D: usize>(points: &[[T; D]], params: &CloudParams<T>) -> Result<CloudFit<T, D>> {
    if points.len() < 2 {
        return Err(Error::Input(format!("need at least 2 points, got {}", points.len())));
    }
    let graph = build_knn(points, params.k)?;
    let mut spec = ProblemSpec::point_cloud(params.sigma);
    spec.curvature = params.curvature;
    let initial = pca_tangents(points, &graph);
    let sites = SiteSet::new(points.to_vec(), vec![T::zero(); points.len()]);
    let problem = Problem::new(spec, sites, graph)?;
    let q = vec![T::one(); points.len()];
    let (lines, stats) = solve_tangents(&problem, &initial, &q, &params.trust_region)?;
    Ok(CloudFit { problem, initial, lines, stats })
}
