//! Scalar abstraction shared by every numeric module.
//!
//! All decompositions are written against [`Real`], which is implemented for
//! `f32` and `f64`. Linear algebra comes from `nalgebra::RealField`, FFTs from
//! `rustfft::FftNum`, and conversions from `num-traits`.

use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    RealField + FftNum + Copy + FromPrimitive + ToPrimitive + Default + Display + LowerExp + Debug
{
    /// Lossy conversion from an `f64` literal or computed constant.
    fn lit(x: f64) -> Self;

    /// Conversion from a count.
    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn as_f64(self) -> f64;

    /// Machine epsilon of the concrete type.
    fn eps() -> Self;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn eps() -> Self {
        f64::EPSILON
    }
}

pub(crate) fn mean<T: Real>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().fold(T::zero(), |acc, &x| acc + x) / T::from_count(xs.len())
}

/// Standard deviation with divisor `n - ddof`.
pub(crate) fn std_dev<T: Real>(xs: &[T], ddof: usize) -> T {
    if xs.len() <= ddof {
        return T::zero();
    }
    let m = mean(xs);
    let ss = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    (ss / T::from_count(xs.len() - ddof)).sqrt()
}

/// Pearson correlation; zero when either input has no variance.
pub fn correlation<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = T::zero();
    let mut saa = T::zero();
    let mut sbb = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= T::zero() || sbb <= T::zero() {
        return T::zero();
    }
    sab / (saa * sbb).sqrt()
}
