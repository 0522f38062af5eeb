//! Local parameterization of tangent updates.
//!
//! Around the current line `(a, t)` a site has `2D - 1` free parameters: an
//! anchor offset `u` and rotation angles in an orthonormal frame `(t, e1[, e2])`:
//! `dir = cos(a) t + sin(a) e1` in 2D and
//! `dir = cos(a) cos(b) t + sin(a) cos(b) e1 + sin(b) e2` in 3D.
//! The direction stays unit length without constraints.

use num_traits::Float;

use crate::dual::Dual;
use crate::geometry::TangentLine;
use crate::scalar::{lift, Real};
use crate::vector::{cross3, normalized, rejection};

/// Number of parameters per site in `d` dimensions.
pub const fn params_per_site(d: usize) -> usize {
    2 * d - 1
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Frame<T, const D: usize> {
    pub anchor: [T; D],
    pub t: [T; D],
    pub e: [[T; D]; 2],
}

impl<T: Real, const D: usize> Frame<T, D> {
    pub fn new(l: &TangentLine<T, D>) -> Self {
        assert!(D == 2 || D == 3, "only 2D and 3D tangents are supported");
        let t = l.direction;
        let zero = [T::zero(); D];
        let e = if D == 2 {
            let mut e1 = zero;
            e1[0] = -t[1];
            e1[1] = t[0];
            [e1, zero]
        } else {
            // Axis least aligned with t, orthogonalized.
            let k = (0..D)
                .min_by(|&a, &b| t[a].abs().partial_cmp(&t[b].abs()).unwrap_or(std::cmp::Ordering::Equal))
                .unwrap();
            let mut axis = zero;
            axis[k] = T::one();
            let e1 = normalized(&rejection(&axis, &t)).expect("axis not parallel to t");
            let t3 = [t[0], t[1], t[2]];
            let e13 = [e1[0], e1[1], e1[2]];
            let c = cross3(&t3, &e13);
            let mut e2 = zero;
            for k in 0..3 {
                e2[k] = c[k];
            }
            [e1, e2]
        };
        Frame { anchor: l.anchor, t, e }
    }

    /// The line at parameter vector `p` (length `2D - 1`) in any float type.
    #[inline]
    pub fn line<S: Float>(&self, p: &[S]) -> TangentLine<S, D> {
        let anchor = std::array::from_fn(|k| lift::<T, S>(self.anchor[k]) + p[k]);
        let direction = if D == 2 {
            let (s, c) = p[2].sin_cos();
            std::array::from_fn(|k| c * lift(self.t[k]) + s * lift(self.e[0][k]))
        } else {
            let (sa, ca) = p[3].sin_cos();
            let (sb, cb) = p[4].sin_cos();
            std::array::from_fn(|k| {
                ca * cb * lift(self.t[k]) + sa * cb * lift(self.e[0][k]) + sb * lift(self.e[1][k])
            })
        };
        TangentLine { anchor, direction }
    }

    /// The line at parameters zero with all `P` parameters seeded as dual
    /// variables starting at index `offset`.
    #[inline]
    pub fn dual_line<const P: usize, const N: usize>(&self, offset: usize) -> TangentLine<Dual<T, N>, D> {
        let p: [Dual<T, N>; P] = std::array::from_fn(|k| Dual::variable(T::zero(), offset + k));
        self.line(&p)
    }

    /// Applies a step and re-normalizes the direction.
    pub fn apply(&self, step: &[T]) -> TangentLine<T, D> {
        let mut l = self.line(step);
        l.renormalize();
        l
    }
}

/// Orthonormality defect of a frame, for tests.
#[cfg(test)]
pub(crate) fn frame_defect<T: Real, const D: usize>(f: &Frame<T, D>) -> T {
    use crate::vector::dot;
    let mut worst = (dot(&f.t, &f.t) - T::one()).abs();
    for k in 0..(D - 1) {
        worst = worst.max((dot(&f.e[k], &f.e[k]) - T::one()).abs());
        worst = worst.max(dot(&f.t, &f.e[k]).abs());
    }
    if D == 3 {
        worst = worst.max(dot(&f.e[0], &f.e[1]).abs());
    }
    worst
}
