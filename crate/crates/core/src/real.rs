//! Scalar abstraction for the numeric core.
//!
//! Tensor and tape code is generic over [`Real`]; the rest of the crate uses
//! the `f64` aliases exported from the crate root.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable by the tensor/autodiff core.
pub trait Real:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + 'static
{
    /// Lossy conversion from `f64`, used for literals and RNG draws.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("f64 convertible to Real")
    }
}

impl<T> Real for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + std::iter::Sum
        + std::fmt::Debug
        + std::fmt::Display
        + Default
        + 'static
{
}
