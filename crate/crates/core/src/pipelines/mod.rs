//! End-to-end applications: image edges, vessel center-lines and curve
//! fitting to point clouds.

pub mod cloud;
pub mod edges;
pub mod vessels;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

pub use cloud::{fit_point_cloud, pca_tangents, CloudFit, CloudParams};
pub use edges::{
    detect_edges_2d, edge_likelihoods, init_edge_tangents, pixel_position, sobel_gradients, subpixel_mask, EdgeDetection, EdgeInit,
    EdgeParams, GradientField, SubpixelMask, Tier,
};
pub use vessels::{
    detect_vessels_3d, fit_tangents_fixed_q, hysteresis, retain_top, RidgeFit, RidgeParams, VesselDetection,
    VesselField, VesselParams,
};

/// How feature magnitudes are made dimensionless.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the sample standard deviation.
    #[default]
    Std,
    /// Divide by the sample variance.
    Variance,
    /// Leave raw.
    None,
}

/// Divisor for `values` under `mode`; `None` when the spread vanishes.
pub(crate) fn normalize_by_spread<T: Real>(values: &[T], mode: Normalization) -> Option<T> {
    if mode == Normalization::None {
        return Some(T::one());
    }
    let n = values.len();
    if n < 2 {
        return None;
    }
    let nt = T::lit(n as f64);
    let mean = values.iter().copied().sum::<T>() / nt;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (nt - T::one());
    let div = match mode {
        Normalization::Std => var.sqrt(),
        _ => var,
    };
    (div > T::zero() && div.is_finite()).then_some(div)
}

/// Detection cost `offset - slope * strength`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct Likelihood<T> {
    pub offset: T,
    pub slope: T,
}

impl<T: Real> Default for Likelihood<T> {
    fn default() -> Self {
        Likelihood { offset: T::lit(1.8), slope: T::lit(1.4) }
    }
}

impl<T: Real> Likelihood<T> {
    #[inline]
    pub fn lambda(&self, strength: T) -> T {
        self.offset - self.slope * strength
    }
}

/// Unit eigenvector of the largest eigenvalue of a symmetric matrix, by
/// cyclic Jacobi rotations. The sign is fixed so the largest component is
/// positive.
pub fn principal_axis<T: Real, const D: usize>(m: [[T; D]; D]) -> [T; D] {
    let mut a = m;
    let mut v = [[T::zero(); D]; D];
    for (k, row) in v.iter_mut().enumerate() {
        row[k] = T::one();
    }
    for _ in 0..64 {
        let off: T = (0..D).flat_map(|r| (0..D).filter(move |&c| c != r).map(move |c| (r, c))).map(|(r, c)| a[r][c] * a[r][c]).sum();
        let scale: T = (0..D).map(|r| a[r][r] * a[r][r]).sum::<T>() + off;
        if off <= T::epsilon() * T::epsilon() * scale {
            break;
        }
        for p in 0..D {
            for q in p + 1..D {
                if a[p][q] == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..D {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..D {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let best = (0..D).fold(0, |b, k| if a[k][k] > a[b][b] { k } else { b });
    let mut axis = [T::zero(); D];
    for k in 0..D {
        axis[k] = v[k][best];
    }
    let lead = (0..D).fold(0, |b, k| if axis[k].abs() > axis[b].abs() { k } else { b });
    if axis[lead] < T::zero() {
        axis.iter_mut().for_each(|x| *x = -*x);
    }
    axis
}
