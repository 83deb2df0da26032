//! Scalar abstraction shared by the dense kernels.
//!
//! Everything in [`crate::linalg`], [`crate::quadrature`] and the potential
//! evaluators is written against [`Real`], so `f32` and `f64` both work. The
//! higher-level verification modules fix the scalar to `f64`, see the type
//! aliases at the crate root.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar usable by the matrix kit and quadrature.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + std::fmt::Display + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the literal is not representable,
    /// which cannot happen for `f32`/`f64` (values saturate to infinity).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the scalar type.
    fn eps() -> Self;
}

impl Real for f32 {
    fn eps() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn eps() -> Self {
        f64::EPSILON
    }
}
