//! The scalar abstraction every numeric module is generic over.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssignOps};
use rand::distr::StandardUniform;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

/// Floating-point scalar usable as the element type of tapes, parameters and
/// datasets. Implemented for `f32` and `f64`; everything downstream picks the
/// precision through this trait.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Display
    + LowerExp
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Shorthand conversion from an `f64` literal. Panics only for types that
    /// cannot represent ordinary constants, which neither `f32` nor `f64` is.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant not representable")
    }

    /// Lossless-enough view for printing and serialization.
    fn to_f64_c(self) -> f64;

    /// One standard-normal draw.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One uniform draw from `[0, 1)`.
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn to_f64_c(self) -> f64 {
        self
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardUniform.sample(rng)
    }
}

impl Scalar for f32 {
    #[inline]
    fn to_f64_c(self) -> f64 {
        self as f64
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn uniform_01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardUniform.sample(rng)
    }
}

/// Numerically stable `ln(1 + exp(x))`.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// Logistic sigmoid, computed through the stable softplus.
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
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-5.0, -0.3, 0.0, 0.3, 5.0] {
            let naive = (1.0f64 + x.exp()).ln();
            assert!((softplus(x) - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_saturates_without_overflow() {
        assert!(softplus(800.0f64).is_finite());
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0f64) >= 0.0);
        assert!(softplus(-800.0f64) < 1e-300);
    }

    #[test]
    fn sigmoid_is_symmetric_and_stable() {
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
        assert!((sigmoid(3.0f64) + sigmoid(-3.0f64) - 1.0).abs() < 1e-15);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert!(sigmoid(-1000.0f64) >= 0.0);
    }

    #[test]
    fn f32_instantiation_works() {
        let x: f32 = Scalar::c(0.25);
        assert_eq!(x, 0.25f32);
        assert!((softplus(1.0f32) - 1.3132616).abs() < 1e-6);
    }
}
