//! Scalar abstraction for the tensor substrate.
//!
//! All numeric code is generic over [`Scalar`] so the same kernels run in
//! f32 (training / inference default) and f64 (finite-difference gradient
//! verification, where 32-bit arithmetic is too noisy).

use std::fmt;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type usable by [`crate::tensor::Tensor`].
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an f64 literal into the active scalar type.
#[inline]
pub fn lit<E: Scalar>(v: f64) -> E {
    E::from_f64(v).expect("literal representable in scalar type")
}
