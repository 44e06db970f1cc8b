//! Scalar abstraction: the whole library is generic over the floating-point
//! type through this trait, with `f64` as the working precision everywhere
//! the benchmark tolerances (1e-10 and tighter) are meaningful.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable for all assembly, integration and solves.
pub trait Real:
    RealField + FromPrimitive + ToPrimitive + std::fmt::LowerExp + std::fmt::Display + Copy
{
    /// Lossy conversion from `f64`, used for literals and tableau constants.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Shorthand for converting an `f64` literal into the working scalar.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64_lossy(x)
}
