//! Floating-point abstraction shared by the evaluation and number-theoretic code.

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst};
use rustfft::FftNum;

/// Real scalar usable by the generic parts of the crate (`f32` or `f64`).
pub trait Scalar:
    Float + FloatConst + FftNum + Default + Display + LowerExp + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Scalar>(v: usize) -> T {
    T::from_usize(v).expect("usize representable in scalar type")
}

#[inline]
pub fn from_i64<T: Scalar>(v: i64) -> T {
    T::from_i64(v).expect("i64 representable in scalar type")
}

#[inline]
pub fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().expect("scalar converts to f64")
}
