//! The mask-producing separation network.
//!
//! Pipeline: segment the encoded representation into overlapping chunks,
//! apply the dual-temporal convolutional encoding once, run the layer stack
//! (intra-chunk recurrence + inter-chunk strided attention, or the
//! dual-path recurrent baseline), overlap-add back to a sequence, and
//! project each frame through a sigmoid mask head.

pub mod accounting;
pub mod config;
pub mod layers;
pub mod params;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::chunker;
use crate::exec::ExecCtx;
use crate::frontend::{self, EncodedRep, FrontendError};
use crate::scalar::Scalar;
use crate::tensor::{stack0, Tensor};

pub use accounting::{count_parameters, ParamAccounting};
pub use config::{ConfigError, ModelConfig, SeparatorKind};
pub use params::{ModelParams, ParamsError};

/// Number of convolution blocks in the dual-temporal positional encoding.
pub const POSITION_ENC_BLOCKS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Chunk(#[from] chunker::ChunkError),
    #[error("audio is {got} Hz but the model expects {expected} Hz; resampling is not supported")]
    SampleRateMismatch { expected: u32, got: u32 },
}

/// Per-speaker sigmoid masks [n_speakers, D_enc, L]; every value in (0, 1).
#[derive(Debug, Clone)]
pub struct MaskSet<E: Scalar> {
    pub masks: Tensor<E>,
}

impl<E: Scalar> MaskSet<E> {
    pub fn n_speakers(&self) -> usize {
        self.masks.shape()[0]
    }
}

/// Runs the separator over an encoded representation.
pub fn separate<E: Scalar>(
    rep: &EncodedRep<E>,
    cfg: &ModelConfig,
    params: &ModelParams<E>,
    ctx: &ExecCtx,
) -> Result<MaskSet<E>, ModelError> {
    cfg.validate()?;
    let d_in = rep.features.shape()[0];
    if d_in != cfg.d_model {
        return Err(ConfigError::ChannelMismatch {
            d_model: cfg.d_model,
            d_enc: d_in,
        }
        .into());
    }
    let chunked = chunker::segment(&rep.features, cfg.chunk_hop);
    let encoded = layers::dual_temporal_encoding(&chunked.chunks, &params.position_enc);
    // [D, 2P, S] -> [2P, S, D] for the layer stack.
    let mut cur = encoded.permute3([1, 2, 0]);
    for layer in &params.layers {
        cur = layers::layer_forward(&cur, layer, cfg.n_heads, ctx);
    }
    let back = cur.permute3([2, 0, 1]);
    let seq = chunked.with_chunks(back).overlap_add()?; // [D, L]
    let l = seq.shape()[1];
    let logits = seq
        .transpose2()
        .matmul(&params.mask_w)
        .add_bias(&params.mask_b); // [L, n_spk * D_enc]
    let masks = logits
        .sigmoid()
        .reshape(&[l, cfg.n_speakers, cfg.d_enc])
        .permute3([1, 2, 0]);
    Ok(MaskSet { masks })
}

/// Elementwise product of the representation with each speaker's mask.
pub fn apply_masks<E: Scalar>(rep: &EncodedRep<E>, masks: &MaskSet<E>) -> Vec<EncodedRep<E>> {
    (0..masks.n_speakers())
        .map(|s| rep.with_features(masks.masks.index0(s).mul(&rep.features)))
        .collect()
}

/// A configuration plus its parameters.
#[derive(Debug, Clone)]
pub struct Model<E: Scalar> {
    pub config: ModelConfig,
    pub params: ModelParams<E>,
}

impl<E: Scalar> Model<E> {
    /// Fresh model with parameters drawn deterministically from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(Model { config, params })
    }

    /// Same weights with gradient tracking severed; what inference and
    /// benchmarking run. Parameters stay shared, not copied.
    pub fn frozen(&self) -> Model<E> {
        Model {
            config: self.config.clone(),
            params: self.params.map(&self.config, |t| t.detach()),
        }
    }

    pub fn encode(&self, samples: &[E]) -> Result<EncodedRep<E>, FrontendError> {
        frontend::encode(samples, &self.params.encoder_w, self.config.enc_stride)
    }

    /// Waveform in, per-speaker waveform tensor [n_speakers, N] out.
    /// Keeps the gradient graph when the parameters are tracked.
    pub fn estimate_sources(&self, samples: &[E], ctx: &ExecCtx) -> Result<Tensor<E>, ModelError> {
        let rep = self.encode(samples)?;
        let masks = separate(&rep, &self.config, &self.params, ctx)?;
        let per_speaker: Vec<Tensor<E>> = apply_masks(&rep, &masks)
            .iter()
            .map(|m| frontend::decode(m, &self.params.decoder_w))
            .collect();
        Ok(stack0(&per_speaker))
    }

    /// Separates an audio buffer into one buffer per speaker, each exactly
    /// the input's length and sample rate.
    pub fn separate_audio(
        &self,
        audio: &AudioBuffer,
        ctx: &ExecCtx,
    ) -> Result<Vec<AudioBuffer>, ModelError> {
        if audio.sample_rate() != self.config.sample_rate {
            return Err(ModelError::SampleRateMismatch {
                expected: self.config.sample_rate,
                got: audio.sample_rate(),
            });
        }
        let samples = frontend::samples_to_scalar::<E>(audio.samples());
        let sources = self.frozen().estimate_sources(&samples, ctx)?;
        let n = audio.len();
        Ok((0..sources.shape()[0])
            .map(|s| {
                let row: Vec<f32> = sources
                    .index0(s)
                    .data()
                    .iter()
                    .map(|v| v.to_f32().unwrap_or(0.0))
                    .collect();
                debug_assert_eq!(row.len(), n);
                AudioBuffer::new(row, audio.sample_rate()).expect("non-empty output")
            })
            .collect())
    }
}
