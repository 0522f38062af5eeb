//! Fixed-size vector helpers over `[S; D]`.

use num_traits::Float;

pub type Vector<S, const D: usize> = [S; D];

#[inline]
pub fn dot<S: Float, const D: usize>(a: &[S; D], b: &[S; D]) -> S {
    let mut s = S::zero();
    for k in 0..D {
        s = s + a[k] * b[k];
    }
    s
}

#[inline]
pub fn add<S: Float, const D: usize>(a: &[S; D], b: &[S; D]) -> [S; D] {
    std::array::from_fn(|k| a[k] + b[k])
}

#[inline]
pub fn sub<S: Float, const D: usize>(a: &[S; D], b: &[S; D]) -> [S; D] {
    std::array::from_fn(|k| a[k] - b[k])
}

#[inline]
pub fn scale<S: Float, const D: usize>(a: &[S; D], s: S) -> [S; D] {
    a.map(|x| x * s)
}

/// `a + s * b`
#[inline]
pub fn axpy<S: Float, const D: usize>(a: &[S; D], s: S, b: &[S; D]) -> [S; D] {
    std::array::from_fn(|k| a[k] + s * b[k])
}

#[inline]
pub fn norm_sq<S: Float, const D: usize>(a: &[S; D]) -> S {
    dot(a, a)
}

#[inline]
pub fn norm<S: Float, const D: usize>(a: &[S; D]) -> S {
    norm_sq(a).sqrt()
}

/// Unit vector along `a`, or `None` for a zero (or non-finite) vector.
pub fn normalized<S: Float, const D: usize>(a: &[S; D]) -> Option<[S; D]> {
    let n = norm(a);
    if n > S::zero() && n.is_finite() {
        Some(scale(a, S::one() / n))
    } else {
        None
    }
}

/// Component of `v` orthogonal to the unit vector `u`.
#[inline]
pub fn rejection<S: Float, const D: usize>(v: &[S; D], u: &[S; D]) -> [S; D] {
    axpy(v, -dot(v, u), u)
}

pub fn cross3<S: Float>(a: &[S; 3], b: &[S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// The first standard basis vector, used as a fallback direction.
pub fn unit_x<S: Float, const D: usize>() -> [S; D] {
    std::array::from_fn(|k| if k == 0 { S::one() } else { S::zero() })
}

pub fn cast<T: Float, S: Float, const D: usize>(a: &[T; D]) -> [S; D] {
    a.map(|x| S::from(x).expect("representable"))
}

/// Angle between two lines (direction sign ignored), in radians within [0, pi/2].
pub fn line_angle<S: Float, const D: usize>(a: &[S; D], b: &[S; D]) -> S {
    let c = (dot(a, b).abs() / (norm(a) * norm(b))).min(S::one());
    c.acos()
}
