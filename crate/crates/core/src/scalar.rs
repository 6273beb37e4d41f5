//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`], so the same
//! estimators run in `f32` or `f64` (the simulation harness pins `f64`).

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// A real scalar usable by the estimators: a [`RealField`] with lossless
/// conversions from the integer counts that show up everywhere (subsample
/// sizes, ranks, levels).
pub trait Scalar: RealField + FromPrimitive + ToPrimitive + Copy {
    /// The scalar value of a `usize` count.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Finite and strictly positive (rejects NaN).
    fn is_positive_real(self) -> bool {
        self.is_finite() && self > Self::zero()
    }
}

impl<T> Scalar for T where T: RealField + FromPrimitive + ToPrimitive + Copy {}

#[cfg(test)]
mod tests {
    use super::*;

    fn level_fraction<T: Scalar>(zeros: usize, q: usize) -> T {
        T::from_count(zeros + 1) / T::from_count(q)
    }

    #[test]
    fn works_for_both_float_widths() {
        assert_eq!(level_fraction::<f64>(1, 4), 0.5);
        assert_eq!(level_fraction::<f32>(1, 4), 0.5f32);
    }
}
