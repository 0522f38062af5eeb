//! Scalar traits.
//!
//! Numeric code in this crate is generic over [`Real`], implemented for `f32`
//! and `f64`. Formulas that the tangent solver differentiates are generic over
//! plain [`num_traits::Float`] instead, so they evaluate unchanged on
//! [`Dual`](crate::dual::Dual) numbers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive};

/// A real floating point type: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant, rounding to the nearest representable value.
    fn lit(v: f64) -> Self;

    /// Widens to `f64`.
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Converts an `f64` constant into any `Float`, including dual numbers.
#[inline]
pub fn cst<S: Float>(v: f64) -> S {
    S::from(v).expect("constant representable in target float type")
}

/// Lifts a real value into another float type (e.g. a constant dual number).
#[inline]
pub fn lift<T: Real, S: Float>(v: T) -> S {
    S::from(v).expect("value representable in target float type")
}

/// Logistic function `1 / (1 + exp(-x))`, evaluated without overflow for
/// arguments of either sign.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Bernoulli entropy `-q ln q - (1-q) ln (1-q)` with `0 ln 0 = 0`.
#[inline]
pub fn bernoulli_entropy<T: Real>(q: T) -> T {
    let term = |p: T| if p > T::zero() { -p * p.ln() } else { T::zero() };
    term(q) + term(T::one() - q)
}
