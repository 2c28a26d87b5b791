//! Scalar abstraction shared by the numeric parts of the crate.
//!
//! Everything that does arithmetic on scores, probabilities or model
//! parameters is written against [`Scalar`] so it can run in `f32` or `f64`.
//! Stored embeddings are always `f32`; they are widened on read.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable for scores, probabilities and parameters.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64` literals and intermediate values.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_f32(v: f32) -> Self {
        Self::from_f32(v).expect("f32 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product of two equally sized slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == T::zero() || nb == T::zero() {
        return T::zero();
    }
    // sqrt of the product keeps cos(v, v) exactly 1.
    let c = dot(a, b) / (na * nb).sqrt();
    c.max(-T::one()).min(T::one())
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_parallel_and_orthogonal() {
        assert_eq!(cosine(&[1.0f64, 2.0], &[2.0, 4.0]), 1.0);
        assert_eq!(cosine(&[1.0f64, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0f32, 0.0], &[1.0, 1.0]), 0.0);
    }

    #[test]
    fn softmax_sums_to_one_in_both_widths() {
        let p = softmax(&[1.0f64, -3.0, 700.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let q = softmax(&[0.5f32, 0.25]);
        assert!((q.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
