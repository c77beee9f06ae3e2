//! Flat key=value run configuration.
//!
//! One human-readable document carries every model, data, and trainer
//! hyperparameter. Lines are `key = value`; `#` starts a comment. Unknown
//! keys are rejected. Serialization uses a fixed key order so identical
//! configurations produce identical bytes.

use std::str::FromStr;

use thiserror::Error;

use crate::separator::{ModelConfig, SeparatorKind};
use crate::trainer::dataset::{FreqBand, SyntheticMixSpec};
use crate::trainer::TrainOptions;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
}

/// Every tunable of the pipeline with its default.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // model
    pub d_model: usize,
    pub h_lstm: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub n_layers: usize,
    pub n_speakers: usize,
    pub chunk_hop: usize,
    pub d_enc: usize,
    pub enc_kernel: usize,
    pub enc_stride: usize,
    pub separator: SeparatorKind,
    pub sample_rate: u32,
    // synthetic data
    pub n_items: usize,
    pub duration_s: f64,
    pub family_a_min_hz: f64,
    pub family_a_max_hz: f64,
    pub family_b_min_hz: f64,
    pub family_b_max_hz: f64,
    // trainer
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub valid_items: usize,
    /// Stop once validation SI-SNRi reaches this many dB; 0 disables.
    pub early_stop_si_snri: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        RunConfig {
            d_model: model.d_model,
            h_lstm: model.h_lstm,
            n_heads: model.n_heads,
            d_ffn: model.d_ffn,
            n_layers: model.n_layers,
            n_speakers: model.n_speakers,
            chunk_hop: model.chunk_hop,
            d_enc: model.d_enc,
            enc_kernel: model.enc_kernel,
            enc_stride: model.enc_stride,
            separator: model.separator_kind,
            sample_rate: model.sample_rate,
            n_items: 128,
            duration_s: 2.0,
            family_a_min_hz: 100.0,
            family_a_max_hz: 900.0,
            family_b_min_hz: 1100.0,
            family_b_max_hz: 1900.0,
            seed: 17,
            epochs: 30,
            lr: 1e-3,
            clip_norm: 5.0,
            valid_items: 16,
            early_stop_si_snri: 0.0,
        }
    }
}

impl RunConfig {
    /// Desk-scale preset: trains to useful separation in minutes on a CPU.
    pub fn desk() -> Self {
        let model = ModelConfig::desk();
        RunConfig {
            d_model: model.d_model,
            h_lstm: model.h_lstm,
            n_heads: model.n_heads,
            d_ffn: model.d_ffn,
            n_layers: model.n_layers,
            chunk_hop: model.chunk_hop,
            d_enc: model.d_enc,
            ..RunConfig::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            h_lstm: self.h_lstm,
            n_heads: self.n_heads,
            d_ffn: self.d_ffn,
            n_layers: self.n_layers,
            n_speakers: self.n_speakers,
            chunk_hop: self.chunk_hop,
            d_enc: self.d_enc,
            enc_kernel: self.enc_kernel,
            enc_stride: self.enc_stride,
            separator_kind: self.separator,
            sample_rate: self.sample_rate,
        }
    }

    pub fn mix_spec(&self) -> SyntheticMixSpec {
        SyntheticMixSpec {
            seed: self.seed,
            n_items: self.n_items,
            duration_s: self.duration_s,
            sample_rate: self.sample_rate,
            family_a: FreqBand {
                min_hz: self.family_a_min_hz,
                max_hz: self.family_a_max_hz,
            },
            family_b: FreqBand {
                min_hz: self.family_b_min_hz,
                max_hz: self.family_b_max_hz,
            },
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            lr: self.lr,
            clip_norm: self.clip_norm,
            seed: self.seed,
            valid_items: self.valid_items,
            early_stop_si_snri: if self.early_stop_si_snri > 0.0 {
                Some(self.early_stop_si_snri)
            } else {
                None
            },
        }
    }

    /// Serializes with a fixed key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.entries() {
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d_model", self.d_model.to_string()),
            ("h_lstm", self.h_lstm.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ffn", self.d_ffn.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_speakers", self.n_speakers.to_string()),
            ("chunk_hop", self.chunk_hop.to_string()),
            ("d_enc", self.d_enc.to_string()),
            ("enc_kernel", self.enc_kernel.to_string()),
            ("enc_stride", self.enc_stride.to_string()),
            ("separator", self.separator.as_str().to_string()),
            ("sample_rate", self.sample_rate.to_string()),
            ("n_items", self.n_items.to_string()),
            ("duration_s", format_f64(self.duration_s)),
            ("family_a_min_hz", format_f64(self.family_a_min_hz)),
            ("family_a_max_hz", format_f64(self.family_a_max_hz)),
            ("family_b_min_hz", format_f64(self.family_b_min_hz)),
            ("family_b_max_hz", format_f64(self.family_b_max_hz)),
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", format_f64(self.lr)),
            ("clip_norm", format_f64(self.clip_norm)),
            ("valid_items", self.valid_items.to_string()),
            ("early_stop_si_snri", format_f64(self.early_stop_si_snri)),
        ]
    }

    /// Parses a document on top of the defaults; later lines win.
    pub fn from_text(text: &str) -> Result<Self, ConfigFileError> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines onto this configuration.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigFileError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigFileError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigFileError> {
        fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigFileError> {
            value.parse().map_err(|_| ConfigFileError::BadValue {
                line,
                key: key.into(),
                value: value.into(),
            })
        }
        match key {
            "d_model" => self.d_model = parse(key, value, line)?,
            "h_lstm" => self.h_lstm = parse(key, value, line)?,
            "n_heads" => self.n_heads = parse(key, value, line)?,
            "d_ffn" => self.d_ffn = parse(key, value, line)?,
            "n_layers" => self.n_layers = parse(key, value, line)?,
            "n_speakers" => self.n_speakers = parse(key, value, line)?,
            "chunk_hop" => self.chunk_hop = parse(key, value, line)?,
            "d_enc" => self.d_enc = parse(key, value, line)?,
            "enc_kernel" => self.enc_kernel = parse(key, value, line)?,
            "enc_stride" => self.enc_stride = parse(key, value, line)?,
            "separator" => {
                self.separator =
                    SeparatorKind::from_str(value).map_err(|_| ConfigFileError::BadValue {
                        line,
                        key: key.into(),
                        value: value.into(),
                    })?
            }
            "sample_rate" => self.sample_rate = parse(key, value, line)?,
            "n_items" => self.n_items = parse(key, value, line)?,
            "duration_s" => self.duration_s = parse(key, value, line)?,
            "family_a_min_hz" => self.family_a_min_hz = parse(key, value, line)?,
            "family_a_max_hz" => self.family_a_max_hz = parse(key, value, line)?,
            "family_b_min_hz" => self.family_b_min_hz = parse(key, value, line)?,
            "family_b_max_hz" => self.family_b_max_hz = parse(key, value, line)?,
            "seed" => self.seed = parse(key, value, line)?,
            "epochs" => self.epochs = parse(key, value, line)?,
            "lr" => self.lr = parse(key, value, line)?,
            "clip_norm" => self.clip_norm = parse(key, value, line)?,
            "valid_items" => self.valid_items = parse(key, value, line)?,
            "early_stop_si_snri" => self.early_stop_si_snri = parse(key, value, line)?,
            other => {
                return Err(ConfigFileError::UnknownKey {
                    line,
                    key: other.into(),
                })
            }
        }
        Ok(())
    }
}

fn format_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        let parsed = RunConfig::from_text(&cfg.to_text()).unwrap();
        assert_eq!(cfg, parsed);
        let desk = RunConfig::desk();
        assert_eq!(desk, RunConfig::from_text(&desk.to_text()).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_text("bogus_key = 3\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::UnknownKey { line: 1, .. }));
    }

    #[test]
    fn file_values_override_defaults() {
        let cfg = RunConfig::from_text("d_model = 32\nlr = 0.01 # comment\n").unwrap();
        assert_eq!(cfg.d_model, 32);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.n_heads, RunConfig::default().n_heads);
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let err = RunConfig::from_text("d_model = 32\nnot a kv line\n").unwrap_err();
        assert!(matches!(err, ConfigFileError::Syntax { line: 2, .. }));
    }
}
