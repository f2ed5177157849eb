//! Finite-difference verification of tape gradients.

use super::{grad, value_of, AdError, Tape, Var};
use crate::scalar::Scalar;
use ndarray::Array2;

/// Compare the tape gradient of a scalar computation against central finite
/// differences at `arrays`, perturbing every coordinate of every array.
///
/// Returns the maximum over coordinates of
/// `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn check_gradient<S, F>(arrays: &[Array2<S>], step: S, f: F) -> Result<S, AdError>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Var<'t, S>,
{
    assert!(step > S::zero(), "step must be positive");
    let (_, analytic) = grad(arrays, &f)?;

    let mut worst = S::zero();
    let mut work: Vec<Array2<S>> = arrays.to_vec();
    for ai in 0..arrays.len() {
        for idx in 0..arrays[ai].len() {
            let (r, c) = (idx / arrays[ai].ncols(), idx % arrays[ai].ncols());
            let orig = work[ai][[r, c]];
            work[ai][[r, c]] = orig + step;
            let up = value_of(&work, &f);
            work[ai][[r, c]] = orig - step;
            let down = value_of(&work, &f);
            work[ai][[r, c]] = orig;

            let numeric = (up - down) / (S::c(2.0) * step);
            let a = analytic[ai][[r, c]];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + S::c(1e-12));
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_checks_tightly() {
        let err = check_gradient(&[array![[1.0_f64]]], 1e-5, |_, xs| xs[0].square()).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn sum_of_sigmoids_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Array2::from_shape_fn((1, 10), |_| rng.random_range(-2.0..2.0));
        let err = check_gradient(&[x], 1e-5, |_, xs| xs[0].sigmoid().sum()).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = check_gradient(&[array![[3.0_f64, -1.0]]], 1e-5, |t, _| t.scalar(2.5)).unwrap();
        assert_eq!(err, 0.0);
    }
}
