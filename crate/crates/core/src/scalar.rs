//! Scalar abstraction shared by every numerical module.
//!
//! All model math is written against [`Scalar`], so the same code runs in
//! `f64` (gradient checks, oracles) and `f32` (large training runs).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Real floating-point type usable by the forecaster.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; exact for values representable in `Self`.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is always convertible to a float scalar")
    }

    /// Widening conversion used for serialization and reporting.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float scalar is always convertible to f64")
    }

    /// Number of bytes in the in-memory representation.
    const BYTES: u8;
}

impl Scalar for f32 {
    const BYTES: u8 = 4;
}

impl Scalar for f64 {
    const BYTES: u8 = 8;
}

/// Converts a count to the scalar type.
pub(crate) fn count<T: Scalar>(n: usize) -> T {
    T::of(n as f64)
}
