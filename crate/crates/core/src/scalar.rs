//! Scalar abstraction for the numeric kernels.

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Floating-point scalar the numeric code is generic over.
///
/// `NdFloat` brings everything `ndarray` needs for matrix products and
/// scalar broadcasting; `FromPrimitive` lets seeded `f64` draws and integer
/// counts convert without per-call-site casts.
pub trait Scalar: NdFloat + FromPrimitive + std::iter::Sum {}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for `S::from_f64(x)` on values known to be representable.
#[inline]
pub fn scalar<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 value representable in scalar type")
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_matches_definition_and_saturates() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        let x = 3.7f64;
        assert!((sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 1e-15);
        assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        assert_eq!(sigmoid(-1e4f64), 0.0);
        assert_eq!(sigmoid(1e4f64), 1.0);
    }

    #[test]
    fn scalar_roundtrip_f32() {
        let v: f32 = scalar(0.25);
        assert_eq!(v, 0.25f32);
    }
}
