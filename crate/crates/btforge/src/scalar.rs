//! Floating-point abstraction for the math core.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type the tape, model, optimizer and decoder are generic over.
///
/// `LinalgScalar` gives access to ndarray's matrix multiply; the rest is the
/// usual float tool set. Implemented for `f32` and `f64` only.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    /// Lossless-enough conversion from f64 (f32 rounds).
    fn of_f64(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite f64 converts")
    }
    /// Widening conversion used for reporting and on-disk tensors.
    fn to_f64_lossy(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("float widens to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
