//! Learnable time-domain encoder/decoder pair.
//!
//! The encoder is a strided 1D convolution over the raw waveform followed by
//! rectification; the decoder is the matching transposed convolution. Frame
//! geometry is recorded on [`EncodedRep`] so decoding restores the exact
//! input length.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("input too short: {n} samples, encoder kernel needs at least {kernel}")]
    InputTooShort { n: usize, kernel: usize },
}

/// 2D representation [D_enc, L] of a waveform plus the geometry to invert it.
#[derive(Debug, Clone)]
pub struct EncodedRep<E: Scalar> {
    pub features: Tensor<E>,
    /// Original waveform length in samples.
    pub n_samples: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl<E: Scalar> EncodedRep<E> {
    /// Frame count of the representation.
    pub fn frames(&self) -> usize {
        self.features.shape()[1]
    }

    /// Same geometry with different features; shapes must agree.
    pub fn with_features(&self, features: Tensor<E>) -> EncodedRep<E> {
        assert_eq!(
            features.shape(),
            self.features.shape(),
            "replacement features change shape: {:?} vs {:?}",
            features.shape(),
            self.features.shape()
        );
        EncodedRep {
            features,
            n_samples: self.n_samples,
            kernel: self.kernel,
            stride: self.stride,
        }
    }
}

/// Frame count after tail padding: smallest L with (n_padded - kernel) % stride == 0.
pub fn frame_count(n: usize, kernel: usize, stride: usize) -> usize {
    let n_padded = padded_samples(n, kernel, stride);
    (n_padded - kernel) / stride + 1
}

fn padded_samples(n: usize, kernel: usize, stride: usize) -> usize {
    let over = (n - kernel) % stride;
    if over == 0 {
        n
    } else {
        n + stride - over
    }
}

/// Convolves the waveform with `w_enc` [D_enc, 1, kernel] at `stride` and
/// rectifies. The tail is zero-padded so every sample falls in some frame.
pub fn encode<E: Scalar>(
    samples: &[E],
    w_enc: &Tensor<E>,
    stride: usize,
) -> Result<EncodedRep<E>, FrontendError> {
    let kernel = w_enc.shape()[2];
    let n = samples.len();
    if n < kernel {
        return Err(FrontendError::InputTooShort { n, kernel });
    }
    let n_padded = padded_samples(n, kernel, stride);
    let mut padded = samples.to_vec();
    padded.resize(n_padded, E::zero());
    let x = Tensor::from_vec(padded, &[1, n_padded]);
    let features = x.conv1d(w_enc, stride).relu();
    Ok(EncodedRep {
        features,
        n_samples: n,
        kernel,
        stride,
    })
}

/// Transposed convolution with `w_dec` [D_enc, 1, kernel], truncated to the
/// original sample count. Returns a rank-1 waveform tensor.
pub fn decode<E: Scalar>(rep: &EncodedRep<E>, w_dec: &Tensor<E>) -> Tensor<E> {
    let full = rep.features.conv_transpose1d(w_dec, rep.stride);
    full.slice_cols(0, rep.n_samples).reshape(&[rep.n_samples])
}

/// Converts f32 audio samples into the active scalar type.
pub fn samples_to_scalar<E: Scalar>(samples: &[f32]) -> Vec<E> {
    samples
        .iter()
        .map(|&s| crate::scalar::lit(s as f64))
        .collect()
}

/// Encoder output before rectification. The gradient checker uses this to
/// keep its probe inputs away from the ReLU kink, where finite differences
/// are invalid.
pub fn encoder_preactivations<E: Scalar>(
    samples: &[E],
    w_enc: &Tensor<E>,
    stride: usize,
) -> Result<Tensor<E>, FrontendError> {
    let kernel = w_enc.shape()[2];
    let n = samples.len();
    if n < kernel {
        return Err(FrontendError::InputTooShort { n, kernel });
    }
    let n_padded = padded_samples(n, kernel, stride);
    let mut padded = samples.to_vec();
    padded.resize(n_padded, E::zero());
    let x = Tensor::from_vec(padded, &[1, n_padded]);
    Ok(x.conv1d(w_enc, stride))
}
