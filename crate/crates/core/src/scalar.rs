//! Scalar abstraction shared by every solver in the crate.
//!
//! All numerical code is written against [`Scalar`], which is satisfied by
//! `f32` and `f64`. Literals go through [`lit`], conversions out go through
//! [`Scalar::to_f64_lossy`].

use nalgebra::RealField;
use num_traits::ToPrimitive;
use std::fmt::{Debug, Display};

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Unit roundoff of the type.
    fn epsilon() -> Self;

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn epsilon() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn epsilon() -> Self {
        f64::EPSILON
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    nalgebra::convert(x)
}

/// Converts an index or count into `T`.
#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    nalgebra::convert(n as f64)
}
