//! Closed-form parameter accounting per sub-block.

use super::config::{ModelConfig, SeparatorKind};
use super::POSITION_ENC_BLOCKS;

/// One named sub-block and its analytic scalar count.
#[derive(Debug, Clone)]
pub struct BlockCount {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ParamAccounting {
    pub blocks: Vec<BlockCount>,
}

impl ParamAccounting {
    pub fn total(&self) -> usize {
        self.blocks.iter().map(|b| b.count).sum()
    }
}

/// Dense layer with bias: d_in*d_out + d_out.
pub fn linear_params(d_in: usize, d_out: usize) -> usize {
    d_in * d_out + d_out
}

/// Bidirectional single-bias LSTM: 2 * 4 * (d*h + h*h + h).
pub fn bilstm_params(d: usize, h: usize) -> usize {
    2 * 4 * (d * h + h * h + h)
}

fn recurrent_stage_params(d: usize, h: usize) -> usize {
    bilstm_params(d, h) + linear_params(2 * h, d) + 2 * d
}

fn attention_stage_params(d: usize, d_ffn: usize) -> usize {
    // pre-norm + 4 projections + mid-norm + FFN + terminal norm
    2 * d
        + 4 * linear_params(d, d)
        + 2 * d
        + linear_params(d, d_ffn)
        + linear_params(d_ffn, d)
        + 2 * d
}

/// Analytic parameter count with a per-sub-block breakdown. The total
/// equals runtime enumeration of the parameter tensors exactly.
pub fn count_parameters(cfg: &ModelConfig) -> ParamAccounting {
    let d = cfg.d_model;
    let mut blocks = vec![
        BlockCount {
            name: "encoder".into(),
            count: cfg.d_enc * cfg.enc_kernel,
        },
        BlockCount {
            name: "position_enc".into(),
            count: POSITION_ENC_BLOCKS * (d * d * 9 + d + 2 * d),
        },
    ];
    for i in 0..cfg.n_layers {
        blocks.push(BlockCount {
            name: format!("layer.{i}.intra"),
            count: recurrent_stage_params(d, cfg.h_lstm),
        });
        let (name, count) = match cfg.separator_kind {
            SeparatorKind::Strnn => (
                format!("layer.{i}.inter_attention"),
                attention_stage_params(d, cfg.d_ffn),
            ),
            SeparatorKind::DprnnBaseline => (
                format!("layer.{i}.inter_recurrent"),
                recurrent_stage_params(d, cfg.h_lstm),
            ),
        };
        blocks.push(BlockCount { name, count });
    }
    blocks.push(BlockCount {
        name: "mask_head".into(),
        count: linear_params(d, cfg.n_speakers * cfg.d_enc),
    });
    blocks.push(BlockCount {
        name: "decoder".into(),
        count: cfg.d_enc * cfg.enc_kernel,
    });
    ParamAccounting { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_hand_count() {
        assert_eq!(linear_params(4, 3), 15);
    }

    #[test]
    fn bilstm_hand_count() {
        // 2 * (4 * (4*4 + 4*4 + 4)) = 288
        assert_eq!(bilstm_params(4, 4), 288);
    }
}
