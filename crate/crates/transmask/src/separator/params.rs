//! Parameter containers, initialization, and ordered tensor enumeration.
//!
//! Every tensor has a stable name and a fixed position in the enumeration
//! order; checkpoints, the optimizer, and the gradient checker all rely on
//! that order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::config::{ModelConfig, SeparatorKind};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("missing tensor {name}")]
    Missing { name: String },
    #[error("tensor {name}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor {index}: expected name {expected}, got {got}")]
    NameMismatch {
        index: usize,
        expected: String,
        got: String,
    },
    #[error("{got} tensors provided, model needs {expected}")]
    CountMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone)]
pub struct LstmDirection<E: Scalar> {
    /// [d_in, 4H] input projection, gate order (input, forget, cell, output).
    pub w_in: Tensor<E>,
    /// [H, 4H] recurrent projection.
    pub w_rec: Tensor<E>,
    /// [4H] gate bias.
    pub bias: Tensor<E>,
}

impl<E: Scalar> LstmDirection<E> {
    pub fn hidden(&self) -> usize {
        self.w_rec.shape()[0]
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm<E: Scalar> {
    pub fwd: LstmDirection<E>,
    pub bwd: LstmDirection<E>,
}

/// Bidirectional recurrence over one axis: scan, 2H->D projection, layer
/// norm, residual.
#[derive(Debug, Clone)]
pub struct RecurrentStage<E: Scalar> {
    pub lstm: BiLstm<E>,
    pub proj_w: Tensor<E>,
    pub proj_b: Tensor<E>,
    pub norm_gain: Tensor<E>,
    pub norm_bias: Tensor<E>,
}

/// Sandwich-norm attention block: pre-norm MHA and feed-forward residual
/// branches plus a terminal normalization.
#[derive(Debug, Clone)]
pub struct AttentionStage<E: Scalar> {
    pub pre_norm_gain: Tensor<E>,
    pub pre_norm_bias: Tensor<E>,
    pub wq: Tensor<E>,
    pub bq: Tensor<E>,
    pub wk: Tensor<E>,
    pub bk: Tensor<E>,
    pub wv: Tensor<E>,
    pub bv: Tensor<E>,
    pub wo: Tensor<E>,
    pub bo: Tensor<E>,
    pub mid_norm_gain: Tensor<E>,
    pub mid_norm_bias: Tensor<E>,
    pub ffn_w1: Tensor<E>,
    pub ffn_b1: Tensor<E>,
    pub ffn_w2: Tensor<E>,
    pub ffn_b2: Tensor<E>,
    pub out_norm_gain: Tensor<E>,
    pub out_norm_bias: Tensor<E>,
}

#[derive(Debug, Clone)]
pub enum InterStage<E: Scalar> {
    Attention(AttentionStage<E>),
    Recurrent(RecurrentStage<E>),
}

#[derive(Debug, Clone)]
pub struct LayerParams<E: Scalar> {
    pub intra: RecurrentStage<E>,
    pub inter: InterStage<E>,
}

/// One positional-encoding block: 3x3 conv, global layer norm affine.
#[derive(Debug, Clone)]
pub struct ConvBlock<E: Scalar> {
    pub w: Tensor<E>,
    pub b: Tensor<E>,
    pub norm_gain: Tensor<E>,
    pub norm_bias: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct ModelParams<E: Scalar> {
    pub encoder_w: Tensor<E>,
    pub position_enc: Vec<ConvBlock<E>>,
    pub layers: Vec<LayerParams<E>>,
    pub mask_w: Tensor<E>,
    pub mask_b: Tensor<E>,
    pub decoder_w: Tensor<E>,
}

enum InitKind {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Uniform {
        fan_in: usize,
    },
    Ones,
    Zeros,
    /// Zeros with the forget-gate slice set to one.
    LstmBias {
        hidden: usize,
    },
}

trait TensorSource<E: Scalar> {
    fn tensor(
        &mut self,
        name: &str,
        shape: &[usize],
        kind: InitKind,
    ) -> Result<Tensor<E>, ParamsError>;
    fn finish(&mut self) -> Result<(), ParamsError>;
}

struct InitSource<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl<E: Scalar> TensorSource<E> for InitSource<'_> {
    fn tensor(
        &mut self,
        _name: &str,
        shape: &[usize],
        kind: InitKind,
    ) -> Result<Tensor<E>, ParamsError> {
        let numel: usize = shape.iter().product();
        let data: Vec<E> = match kind {
            InitKind::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..numel)
                    .map(|_| lit(self.rng.gen_range(-bound..bound)))
                    .collect()
            }
            InitKind::Ones => vec![E::one(); numel],
            InitKind::Zeros => vec![E::zero(); numel],
            InitKind::LstmBias { hidden } => {
                let mut v = vec![E::zero(); numel];
                for slot in v.iter_mut().skip(hidden).take(hidden) {
                    *slot = E::one();
                }
                v
            }
        };
        Ok(Tensor::param(data, shape))
    }

    fn finish(&mut self) -> Result<(), ParamsError> {
        Ok(())
    }
}

struct ListSource<'a, E: Scalar> {
    items: &'a [(String, Tensor<E>)],
    cursor: usize,
    check_names: bool,
}

impl<E: Scalar> TensorSource<E> for ListSource<'_, E> {
    fn tensor(
        &mut self,
        name: &str,
        shape: &[usize],
        _kind: InitKind,
    ) -> Result<Tensor<E>, ParamsError> {
        let Some((got_name, tensor)) = self.items.get(self.cursor) else {
            return Err(ParamsError::Missing { name: name.into() });
        };
        if self.check_names && got_name != name {
            return Err(ParamsError::NameMismatch {
                index: self.cursor,
                expected: name.into(),
                got: got_name.clone(),
            });
        }
        if tensor.shape() != shape {
            return Err(ParamsError::ShapeMismatch {
                name: name.into(),
                expected: shape.to_vec(),
                got: tensor.shape().to_vec(),
            });
        }
        self.cursor += 1;
        Ok(tensor.clone())
    }

    fn finish(&mut self) -> Result<(), ParamsError> {
        if self.cursor != self.items.len() {
            return Err(ParamsError::CountMismatch {
                expected: self.cursor,
                got: self.items.len(),
            });
        }
        Ok(())
    }
}

fn build_lstm_direction<E: Scalar>(
    src: &mut dyn TensorSource<E>,
    prefix: &str,
    d_in: usize,
    hidden: usize,
) -> Result<LstmDirection<E>, ParamsError> {
    Ok(LstmDirection {
        w_in: src.tensor(
            &format!("{prefix}.w_in"),
            &[d_in, 4 * hidden],
            InitKind::Uniform { fan_in: d_in },
        )?,
        w_rec: src.tensor(
            &format!("{prefix}.w_rec"),
            &[hidden, 4 * hidden],
            InitKind::Uniform { fan_in: hidden },
        )?,
        bias: src.tensor(
            &format!("{prefix}.bias"),
            &[4 * hidden],
            InitKind::LstmBias { hidden },
        )?,
    })
}

fn build_recurrent_stage<E: Scalar>(
    src: &mut dyn TensorSource<E>,
    prefix: &str,
    d: usize,
    hidden: usize,
) -> Result<RecurrentStage<E>, ParamsError> {
    Ok(RecurrentStage {
        lstm: BiLstm {
            fwd: build_lstm_direction(src, &format!("{prefix}.lstm.fwd"), d, hidden)?,
            bwd: build_lstm_direction(src, &format!("{prefix}.lstm.bwd"), d, hidden)?,
        },
        proj_w: src.tensor(
            &format!("{prefix}.proj.w"),
            &[2 * hidden, d],
            InitKind::Uniform { fan_in: 2 * hidden },
        )?,
        proj_b: src.tensor(&format!("{prefix}.proj.b"), &[d], InitKind::Zeros)?,
        norm_gain: src.tensor(&format!("{prefix}.norm.gain"), &[d], InitKind::Ones)?,
        norm_bias: src.tensor(&format!("{prefix}.norm.bias"), &[d], InitKind::Zeros)?,
    })
}

fn build_attention_stage<E: Scalar>(
    src: &mut dyn TensorSource<E>,
    prefix: &str,
    d: usize,
    d_ffn: usize,
) -> Result<AttentionStage<E>, ParamsError> {
    let lin = InitKind::Uniform { fan_in: d };
    let named = |s: &str| format!("{prefix}.{s}");
    Ok(AttentionStage {
        pre_norm_gain: src.tensor(&named("pre_norm.gain"), &[d], InitKind::Ones)?,
        pre_norm_bias: src.tensor(&named("pre_norm.bias"), &[d], InitKind::Zeros)?,
        wq: src.tensor(&named("wq"), &[d, d], InitKind::Uniform { fan_in: d })?,
        bq: src.tensor(&named("bq"), &[d], InitKind::Zeros)?,
        wk: src.tensor(&named("wk"), &[d, d], InitKind::Uniform { fan_in: d })?,
        bk: src.tensor(&named("bk"), &[d], InitKind::Zeros)?,
        wv: src.tensor(&named("wv"), &[d, d], InitKind::Uniform { fan_in: d })?,
        bv: src.tensor(&named("bv"), &[d], InitKind::Zeros)?,
        wo: src.tensor(&named("wo"), &[d, d], lin)?,
        bo: src.tensor(&named("bo"), &[d], InitKind::Zeros)?,
        mid_norm_gain: src.tensor(&named("mid_norm.gain"), &[d], InitKind::Ones)?,
        mid_norm_bias: src.tensor(&named("mid_norm.bias"), &[d], InitKind::Zeros)?,
        ffn_w1: src.tensor(
            &named("ffn.w1"),
            &[d, d_ffn],
            InitKind::Uniform { fan_in: d },
        )?,
        ffn_b1: src.tensor(&named("ffn.b1"), &[d_ffn], InitKind::Zeros)?,
        ffn_w2: src.tensor(
            &named("ffn.w2"),
            &[d_ffn, d],
            InitKind::Uniform { fan_in: d_ffn },
        )?,
        ffn_b2: src.tensor(&named("ffn.b2"), &[d], InitKind::Zeros)?,
        out_norm_gain: src.tensor(&named("out_norm.gain"), &[d], InitKind::Ones)?,
        out_norm_bias: src.tensor(&named("out_norm.bias"), &[d], InitKind::Zeros)?,
    })
}

fn build_params<E: Scalar>(
    cfg: &ModelConfig,
    src: &mut dyn TensorSource<E>,
) -> Result<ModelParams<E>, ParamsError> {
    let d = cfg.d_model;
    let encoder_w = src.tensor(
        "encoder.w",
        &[cfg.d_enc, 1, cfg.enc_kernel],
        InitKind::Uniform {
            fan_in: cfg.enc_kernel,
        },
    )?;
    let mut position_enc = Vec::with_capacity(super::POSITION_ENC_BLOCKS);
    for i in 0..super::POSITION_ENC_BLOCKS {
        position_enc.push(ConvBlock {
            w: src.tensor(
                &format!("pos_enc.{i}.conv.w"),
                &[d, d, 3, 3],
                InitKind::Uniform { fan_in: d * 9 },
            )?,
            b: src.tensor(&format!("pos_enc.{i}.conv.b"), &[d], InitKind::Zeros)?,
            norm_gain: src.tensor(&format!("pos_enc.{i}.norm.gain"), &[d], InitKind::Ones)?,
            norm_bias: src.tensor(&format!("pos_enc.{i}.norm.bias"), &[d], InitKind::Zeros)?,
        });
    }
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for i in 0..cfg.n_layers {
        let intra = build_recurrent_stage(src, &format!("layers.{i}.intra"), d, cfg.h_lstm)?;
        let inter = match cfg.separator_kind {
            SeparatorKind::Strnn => InterStage::Attention(build_attention_stage(
                src,
                &format!("layers.{i}.inter.attn"),
                d,
                cfg.d_ffn,
            )?),
            SeparatorKind::DprnnBaseline => InterStage::Recurrent(build_recurrent_stage(
                src,
                &format!("layers.{i}.inter"),
                d,
                cfg.h_lstm,
            )?),
        };
        layers.push(LayerParams { intra, inter });
    }
    let mask_out = cfg.n_speakers * cfg.d_enc;
    let mask_w = src.tensor("mask.w", &[d, mask_out], InitKind::Uniform { fan_in: d })?;
    let mask_b = src.tensor("mask.b", &[mask_out], InitKind::Zeros)?;
    let decoder_w = src.tensor(
        "decoder.w",
        &[cfg.d_enc, 1, cfg.enc_kernel],
        InitKind::Uniform {
            fan_in: cfg.d_enc * cfg.enc_kernel,
        },
    )?;
    src.finish()?;
    Ok(ModelParams {
        encoder_w,
        position_enc,
        layers,
        mask_w,
        mask_b,
        decoder_w,
    })
}

impl<E: Scalar> ModelParams<E> {
    /// Fresh parameters for `cfg`, deterministic in `rng`.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        build_params(cfg, &mut InitSource { rng }).expect("init source never fails")
    }

    /// Rebuilds parameters from `(name, tensor)` pairs in enumeration order.
    pub fn from_tensors(
        cfg: &ModelConfig,
        items: &[(String, Tensor<E>)],
        check_names: bool,
    ) -> Result<Self, ParamsError> {
        build_params(
            cfg,
            &mut ListSource {
                items,
                cursor: 0,
                check_names,
            },
        )
    }

    /// All tensors with their names, in the canonical order.
    pub fn tensors(&self) -> Vec<(String, Tensor<E>)> {
        fn stage<E: Scalar>(
            prefix: &str,
            s: &RecurrentStage<E>,
            out: &mut Vec<(String, Tensor<E>)>,
        ) {
            for (tag, dir) in [("fwd", &s.lstm.fwd), ("bwd", &s.lstm.bwd)] {
                out.push((format!("{prefix}.lstm.{tag}.w_in"), dir.w_in.clone()));
                out.push((format!("{prefix}.lstm.{tag}.w_rec"), dir.w_rec.clone()));
                out.push((format!("{prefix}.lstm.{tag}.bias"), dir.bias.clone()));
            }
            out.push((format!("{prefix}.proj.w"), s.proj_w.clone()));
            out.push((format!("{prefix}.proj.b"), s.proj_b.clone()));
            out.push((format!("{prefix}.norm.gain"), s.norm_gain.clone()));
            out.push((format!("{prefix}.norm.bias"), s.norm_bias.clone()));
        }
        let mut out = Vec::new();
        out.push(("encoder.w".to_string(), self.encoder_w.clone()));
        for (i, b) in self.position_enc.iter().enumerate() {
            out.push((format!("pos_enc.{i}.conv.w"), b.w.clone()));
            out.push((format!("pos_enc.{i}.conv.b"), b.b.clone()));
            out.push((format!("pos_enc.{i}.norm.gain"), b.norm_gain.clone()));
            out.push((format!("pos_enc.{i}.norm.bias"), b.norm_bias.clone()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            stage(&format!("layers.{i}.intra"), &layer.intra, &mut out);
            match &layer.inter {
                InterStage::Recurrent(rec) => stage(&format!("layers.{i}.inter"), rec, &mut out),
                InterStage::Attention(att) => {
                    let p = format!("layers.{i}.inter.attn");
                    for (tag, t) in [
                        ("pre_norm.gain", &att.pre_norm_gain),
                        ("pre_norm.bias", &att.pre_norm_bias),
                        ("wq", &att.wq),
                        ("bq", &att.bq),
                        ("wk", &att.wk),
                        ("bk", &att.bk),
                        ("wv", &att.wv),
                        ("bv", &att.bv),
                        ("wo", &att.wo),
                        ("bo", &att.bo),
                        ("mid_norm.gain", &att.mid_norm_gain),
                        ("mid_norm.bias", &att.mid_norm_bias),
                        ("ffn.w1", &att.ffn_w1),
                        ("ffn.b1", &att.ffn_b1),
                        ("ffn.w2", &att.ffn_w2),
                        ("ffn.b2", &att.ffn_b2),
                        ("out_norm.gain", &att.out_norm_gain),
                        ("out_norm.bias", &att.out_norm_bias),
                    ] {
                        out.push((format!("{p}.{tag}"), t.clone()));
                    }
                }
            }
        }
        out.push(("mask.w".to_string(), self.mask_w.clone()));
        out.push(("mask.b".to_string(), self.mask_b.clone()));
        out.push(("decoder.w".to_string(), self.decoder_w.clone()));
        out
    }

    /// Total number of scalars across all parameter tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// New parameter set with `f` applied to each tensor in order.
    pub fn map(&self, cfg: &ModelConfig, mut f: impl FnMut(&Tensor<E>) -> Tensor<E>) -> Self {
        let mapped: Vec<(String, Tensor<E>)> = self
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let new = f(&t);
                (name, new)
            })
            .collect();
        Self::from_tensors(cfg, &mapped, true).expect("mapped tensors keep shapes")
    }
}
