//! Architectural hyperparameters.

use std::str::FromStr;

use thiserror::Error;

use crate::audio::DEFAULT_SAMPLE_RATE;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field} must be positive")]
    NonPositive { field: &'static str },
    #[error("d_model {d_model} is not divisible by n_heads {n_heads}")]
    HeadsDivide { d_model: usize, n_heads: usize },
    #[error("separator operates at d_model {d_model} but the encoder emits {d_enc} channels")]
    ChannelMismatch { d_model: usize, d_enc: usize },
    #[error("n_speakers must be at least 2, got {0}")]
    TooFewSpeakers(usize),
    #[error("unknown separator kind {0:?} (expected strnn or dprnn_baseline)")]
    UnknownSeparator(String),
    #[error("encoder kernel {kernel} must be at least its stride {stride}")]
    KernelStride { kernel: usize, stride: usize },
}

/// Which inter-chunk stage the separator layers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeparatorKind {
    /// Intra-chunk recurrence + inter-chunk strided self-attention.
    Strnn,
    /// Intra- and inter-chunk recurrence (dual-path RNN baseline).
    DprnnBaseline,
}

impl SeparatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SeparatorKind::Strnn => "strnn",
            SeparatorKind::DprnnBaseline => "dprnn_baseline",
        }
    }
}

impl FromStr for SeparatorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strnn" => Ok(SeparatorKind::Strnn),
            "dprnn_baseline" => Ok(SeparatorKind::DprnnBaseline),
            other => Err(ConfigError::UnknownSeparator(other.into())),
        }
    }
}

/// Every architectural hyperparameter of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Model / attention dimension D.
    pub d_model: usize,
    /// Per-direction LSTM hidden size.
    pub h_lstm: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub n_layers: usize,
    pub n_speakers: usize,
    /// Chunk hop P; chunks are 2P frames wide.
    pub chunk_hop: usize,
    /// Encoder filter count.
    pub d_enc: usize,
    pub enc_kernel: usize,
    pub enc_stride: usize,
    pub separator_kind: SeparatorKind,
    pub sample_rate: u32,
}

impl Default for ModelConfig {
    /// Full-scale six-layer configuration.
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            h_lstm: 128,
            n_heads: 4,
            d_ffn: 256,
            n_layers: 6,
            n_speakers: 2,
            chunk_hop: 64,
            d_enc: 64,
            enc_kernel: 16,
            enc_stride: 8,
            separator_kind: SeparatorKind::Strnn,
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in minutes on a CPU.
    pub fn desk() -> Self {
        ModelConfig {
            d_model: 32,
            h_lstm: 32,
            n_heads: 4,
            d_ffn: 64,
            n_layers: 2,
            n_speakers: 2,
            chunk_hop: 8,
            d_enc: 32,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, v) in [
            ("d_model", self.d_model),
            ("h_lstm", self.h_lstm),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("n_layers", self.n_layers),
            ("chunk_hop", self.chunk_hop),
            ("d_enc", self.d_enc),
            ("enc_kernel", self.enc_kernel),
            ("enc_stride", self.enc_stride),
            ("sample_rate", self.sample_rate as usize),
        ] {
            if v == 0 {
                return Err(ConfigError::NonPositive { field });
            }
        }
        if self.n_speakers < 2 {
            return Err(ConfigError::TooFewSpeakers(self.n_speakers));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ConfigError::HeadsDivide {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        if self.d_enc != self.d_model {
            // The chunked representation feeds conv blocks and layers sized
            // for d_model; there is no bottleneck projection in between.
            return Err(ConfigError::ChannelMismatch {
                d_model: self.d_model,
                d_enc: self.d_enc,
            });
        }
        if self.enc_kernel < self.enc_stride {
            return Err(ConfigError::KernelStride {
                kernel: self.enc_kernel,
                stride: self.enc_stride,
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn chunk_width(&self) -> usize {
        2 * self.chunk_hop
    }
}
