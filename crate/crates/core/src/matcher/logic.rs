//! Łukasiewicz connectives and the soft distance score.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("truth value {0} outside [0, 1]")]
pub struct OutOfRange(pub f64);

/// `max(a + b - 1, 0)`
#[inline]
pub fn soft_and<T: Scalar>(a: T, b: T) -> T {
    (a + b - T::one()).max(T::zero())
}

/// `min(a + b, 1)`
#[inline]
pub fn soft_or<T: Scalar>(a: T, b: T) -> T {
    (a + b).min(T::one())
}

fn check<T: Scalar>(v: T) -> Result<T, OutOfRange> {
    if v >= T::zero() && v <= T::one() {
        Ok(v)
    } else {
        Err(OutOfRange(v.as_f64()))
    }
}

/// [`soft_and`] with input validation.
pub fn try_soft_and<T: Scalar>(a: T, b: T) -> Result<T, OutOfRange> {
    Ok(soft_and(check(a)?, check(b)?))
}

/// [`soft_or`] with input validation.
pub fn try_soft_or<T: Scalar>(a: T, b: T) -> Result<T, OutOfRange> {
    Ok(soft_or(check(a)?, check(b)?))
}

/// Left fold of [`soft_and`]; the empty conjunction is 1.
pub fn soft_and_all<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().fold(T::one(), soft_and)
}

/// Left fold of [`soft_or`]; the empty disjunction is 0.
pub fn soft_or_all<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().fold(T::zero(), soft_or)
}

/// How close an observed distance `d` is to satisfying `d <= d_ref`:
/// 1 when satisfied, else `max(1 - ((d - d_ref) / (d_ref + 1))^2 / 4, 0)`.
pub fn interaction_soft<T: Scalar>(d: usize, d_ref: usize) -> T {
    if d <= d_ref {
        return T::one();
    }
    let gap = T::of_usize(d - d_ref) / (T::of_usize(d_ref) + T::one());
    (T::one() - gap * gap / T::of(4.0)).max(T::zero())
}
