//! Time-domain speech separation with a dual-path separator that combines
//! intra-chunk recurrence with inter-chunk strided self-attention.
//!
//! The crate is self-contained: a minimal tensor substrate with reverse-mode
//! differentiation, WAV I/O, the separation network, an SI-SNR/uPIT training
//! objective, a synthetic-mixture trainer, a finite-difference gradient
//! verification suite, and an inference benchmark harness.
//!
//! Numeric code is generic over the scalar type: `f32` is the training and
//! inference default, `f64` backs the gradient checks.

pub mod audio;
pub mod bench;
pub mod chunker;
pub mod config;
pub mod exec;
pub mod frontend;
pub mod gradcheck;
pub mod objective;
pub mod scalar;
pub mod separator;
pub mod tensor;
pub mod trainer;

pub use scalar::Scalar;
pub use tensor::Tensor;

/// Training / inference precision.
pub type Tensor32 = Tensor<f32>;
/// Gradient-verification precision.
pub type Tensor64 = Tensor<f64>;
