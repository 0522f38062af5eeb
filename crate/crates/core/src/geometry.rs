//! Tangent lines and the distance, curvature and alignment terms built on them.
//!
//! A tangent line is a line, not a ray: every function here gives the same
//! result when a direction is replaced by its negation.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::scalar::cst;
use crate::vector::{axpy, dot, norm, norm_sq, normalized, rejection, sub, unit_x};

/// Lower bound on the distance between denoised points in curvature terms (px).
pub const DENOMINATOR_CLAMP: f64 = 1e-6;

/// A local tangent line: an anchor point and a unit direction in `D` dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct TangentLine<S, const D: usize> {
    #[serde(with = "serde_arrays")]
    pub anchor: [S; D],
    #[serde(with = "serde_arrays")]
    pub direction: [S; D],
}

impl<S: Float, const D: usize> TangentLine<S, D> {
    /// Builds a line through `anchor`, normalizing `direction`. A zero or
    /// non-finite direction falls back to the first axis.
    pub fn new(anchor: [S; D], direction: [S; D]) -> Self {
        let direction = normalized(&direction).unwrap_or_else(unit_x);
        TangentLine { anchor, direction }
    }

    /// Re-normalizes the direction in place.
    pub fn renormalize(&mut self) {
        self.direction = normalized(&self.direction).unwrap_or_else(unit_x);
    }

    pub fn flipped(&self) -> Self {
        TangentLine { anchor: self.anchor, direction: self.direction.map(|x| -x) }
    }

    /// Offset from the line to `p`, orthogonal to the direction.
    #[inline]
    pub fn offset_to(&self, p: &[S; D]) -> [S; D] {
        rejection(&sub(p, &self.anchor), &self.direction)
    }

    pub fn cast<U: Float>(&self) -> TangentLine<U, D> {
        TangentLine {
            anchor: crate::vector::cast(&self.anchor),
            direction: crate::vector::cast(&self.direction),
        }
    }
}

impl<S: Float> TangentLine<S, 2> {
    pub fn from_angle(anchor: [S; 2], angle: S) -> Self {
        TangentLine { anchor, direction: [angle.cos(), angle.sin()] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureKind {
    /// `(d_ij + d_ji) / |p_i - p_j|`
    #[serde(alias = "abs")]
    Absolute,
    /// `(d_ij^2 + d_ji^2) / |p_i - p_j|^2`
    Squared,
}

/// Curvature regularizer choice. `epsilon` (px) only enters the reweighting
/// the solver uses to approximate the absolute mode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureTerm<T> {
    pub kind: CurvatureKind,
    pub epsilon: T,
}

impl<T: Float> CurvatureTerm<T> {
    pub fn squared() -> Self {
        CurvatureTerm { kind: CurvatureKind::Squared, epsilon: cst(0.1) }
    }

    pub fn absolute(epsilon: T) -> Self {
        CurvatureTerm { kind: CurvatureKind::Absolute, epsilon }
    }
}

/// Euclidean distance from `p` to the infinite line `l`.
#[inline]
pub fn point_line_distance<S: Float, const D: usize>(l: &TangentLine<S, D>, p: &[S; D]) -> S {
    norm(&l.offset_to(p))
}

/// Orthogonal projection of `p` onto `l`.
#[inline]
pub fn project_onto_line<S: Float, const D: usize>(l: &TangentLine<S, D>, p: &[S; D]) -> [S; D] {
    let t = dot(&sub(p, &l.anchor), &l.direction);
    axpy(&l.anchor, t, &l.direction)
}

/// Pairwise curvature approximation between tangents `l_i`, `l_j` at points
/// `p_i`, `p_j`. The point distance is clamped below by [`DENOMINATOR_CLAMP`].
pub fn curvature_pair<S: Float, const D: usize>(
    l_i: &TangentLine<S, D>,
    l_j: &TangentLine<S, D>,
    p_i: &[S; D],
    p_j: &[S; D],
    kind: CurvatureKind,
) -> S {
    let clamp: S = cst(DENOMINATOR_CLAMP);
    match kind {
        CurvatureKind::Absolute => {
            let chord = norm(&sub(p_i, p_j)).max(clamp);
            (point_line_distance(l_i, p_j) + point_line_distance(l_j, p_i)) / chord
        }
        CurvatureKind::Squared => {
            let chord_sq = norm_sq(&sub(p_i, p_j)).max(clamp * clamp);
            (norm_sq(&l_i.offset_to(p_j)) + norm_sq(&l_j.offset_to(p_i))) / chord_sq
        }
    }
}

/// Misalignment `|g| sin(angle(l, g))` of a line with a prior direction `g`.
#[inline]
pub fn misalignment<S: Float, const D: usize>(l: &TangentLine<S, D>, g: &[S; D]) -> S {
    norm(&rejection(g, &l.direction))
}

/// `max(0, dist(l, p) - tau)`: no penalty within `tau` of the line.
#[inline]
pub fn truncated_distance<S: Float, const D: usize>(l: &TangentLine<S, D>, p: &[S; D], tau: S) -> S {
    (point_line_distance(l, p) - tau).max(S::zero())
}

mod serde_arrays {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serialize, Ser: Serializer, const D: usize>(
        a: &[S; D],
        ser: Ser,
    ) -> Result<Ser::Ok, Ser::Error> {
        a.as_slice().serialize(ser)
    }

    pub fn deserialize<'de, S: Deserialize<'de>, De: Deserializer<'de>, const D: usize>(
        de: De,
    ) -> Result<[S; D], De::Error> {
        let v = Vec::<S>::deserialize(de)?;
        let n = v.len();
        v.try_into().map_err(|_| De::Error::custom(format!("expected {D} components, got {n}")))
    }
}
