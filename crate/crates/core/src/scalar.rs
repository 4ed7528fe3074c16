//! Floating point abstraction shared by every solver.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the library is generic over (`f32` or `f64`).
///
/// The associated constants carry the precision-dependent floors and
/// tolerances; the `f64` values are the reference ones.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Smallest value a kernel entry or a division denominator may take.
    const KERNEL_FLOOR: Self;
    /// Tolerance on `|sum - 1|` when a caller claims a histogram is normalized.
    const INPUT_NORM_TOL: Self;
    /// Tolerance on `|sum - 1|` after internal renormalization.
    const INTERNAL_NORM_TOL: Self;
    /// Tolerance on `|sum(lambda) - 1|` for ensemble weights.
    const WEIGHT_SUM_TOL: Self;

    /// Lossy conversion from `f64`, used for literals and parameters.
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const KERNEL_FLOOR: Self = 1e-300;
    const INPUT_NORM_TOL: Self = 1e-9;
    const INTERNAL_NORM_TOL: Self = 1e-12;
    const WEIGHT_SUM_TOL: Self = 1e-12;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const KERNEL_FLOOR: Self = f32::MIN_POSITIVE;
    const INPUT_NORM_TOL: Self = 1e-5;
    const INTERNAL_NORM_TOL: Self = 1e-6;
    const WEIGHT_SUM_TOL: Self = 1e-6;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// `max(x, floor)` that also maps NaN to the floor.
#[inline]
pub(crate) fn floor_at<T: Scalar>(x: T, floor: T) -> T {
    if x > floor {
        x
    } else {
        floor
    }
}

/// Numerically stable `log(sum(exp(xs)))`; `-inf` for an empty or all `-inf` input.
pub(crate) fn log_sum_exp<T: Scalar, I>(xs: I) -> T
where
    I: IntoIterator<Item = T> + Clone,
{
    let max = xs
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    let s: T = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_matches_direct_sum() {
        let xs = [0.1_f64, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs.iter().copied()) - direct).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_handles_huge_and_empty() {
        let xs = [1000.0_f64, 1000.0];
        assert!((log_sum_exp(xs.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64, _>(std::iter::empty()), f64::NEG_INFINITY);
        assert_eq!(
            log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY].iter().copied()),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn floor_maps_nan() {
        assert_eq!(floor_at(f64::NAN, 1e-300), 1e-300);
        assert_eq!(floor_at(0.5_f64, 1e-300), 0.5);
    }
}
