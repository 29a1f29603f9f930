//! Scalar abstraction and dense vector kernels shared by the retrieval,
//! clustering and metric code.
//!
//! Everything numeric below the pipeline layer is written against [`Scalar`]
//! so it can run in `f32` (compact embedding storage) or `f64` (the default,
//! used wherever scores are compared at 1e-9 or tighter).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point type usable by the numeric kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; used for literal constants.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}

/// Scales `v` to unit length in place. Returns `false` (leaving `v` as is)
/// when the norm is zero or not finite.
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) -> bool {
    let norm = l2_norm(v);
    if !norm.is_finite() || norm <= T::zero() {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

/// Cosine similarity; zero vectors have similarity 0 with everything.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na <= T::zero() || nb <= T::zero() {
        return T::zero();
    }
    let c = dot(a, b) / (na * nb);
    c.max(-T::one()).min(T::one())
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    (T::one() - cosine_similarity(a, b))
        .max(T::zero())
        .min(T::of(2.0))
}

/// Element-wise mean of equally sized vectors. `None` when `rows` is empty.
pub fn mean_vector<T: Scalar, R: AsRef<[T]>>(rows: &[R]) -> Option<Vec<T>> {
    let first = rows.first()?.as_ref();
    let mut acc = vec![T::zero(); first.len()];
    for row in rows {
        for (a, &x) in acc.iter_mut().zip(row.as_ref()) {
            *a += x;
        }
    }
    let n = T::of_usize(rows.len());
    for a in acc.iter_mut() {
        *a /= n;
    }
    Some(acc)
}

/// Min-max scales `values` to `[0, 1]`. A constant (or single) input maps to
/// 0.5 everywhere.
pub fn min_max_normalize<T: Scalar>(values: &[T]) -> Vec<T> {
    let (lo, hi) = values.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    // NaN spans fall through to the constant case too
    if values.is_empty() || span.is_nan() || span <= T::zero() {
        return vec![T::of(0.5); values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / span).max(T::zero()).min(T::one()))
        .collect()
}
