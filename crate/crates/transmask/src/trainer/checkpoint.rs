//! Self-describing checkpoint files: a text manifest (config + tensor
//! shapes) followed by the raw little-endian f32 payload in manifest order.
//! Bit-exact and diffable; no serialization framework involved.

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::separator::{ModelConfig, ModelParams, ParamsError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TMSK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("payload holds {got} values but the manifest declares {expected}")]
    PayloadLength { expected: usize, got: usize },
    #[error("manifest text is not UTF-8")]
    Utf8,
    #[error("checkpoint does not match the model configuration: {0}")]
    ConfigMismatch(#[from] ParamsError),
}

/// Parsed checkpoint: the embedded config document plus named tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_params(config_text: String, params: &ModelParams<f32>) -> Checkpoint {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| (name, t.shape().to_vec(), t.data().to_vec()))
            .collect();
        Checkpoint {
            config_text,
            tensors,
        }
    }

    /// Rebuilds parameters, verifying names and shapes against `cfg`.
    pub fn into_params(&self, cfg: &ModelConfig) -> Result<ModelParams<f32>, CheckpointError> {
        let items: Vec<(String, Tensor<f32>)> = self
            .tensors
            .iter()
            .map(|(name, shape, data)| (name.clone(), Tensor::param(data.clone(), shape)))
            .collect();
        Ok(ModelParams::from_tensors(cfg, &items, true)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let config = self.config_text.as_bytes();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, _) in &self.tensors {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.push(shape.len() as u8);
            for &dim in shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
        }
        for (_, _, data) in &self.tensors {
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, len: usize| -> Result<&[u8], CheckpointError> {
            let slice = bytes
                .get(*pos..*pos + len)
                .ok_or(CheckpointError::Truncated(*pos))?;
            *pos += len;
            Ok(slice)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let config_text = std::str::from_utf8(take(&mut pos, config_len)?)
            .map_err(|_| CheckpointError::Utf8)?
            .to_string();
        let n_tensors = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut manifest: Vec<(String, Vec<usize>)> = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| CheckpointError::Utf8)?
                .to_string();
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            manifest.push((name, shape));
        }
        let declared: usize = manifest
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum();
        let available = (bytes.len() - pos) / 4;
        if available != declared || !(bytes.len() - pos).is_multiple_of(4) {
            return Err(CheckpointError::PayloadLength {
                expected: declared,
                got: available,
            });
        }
        let mut tensors = Vec::with_capacity(n_tensors);
        for (name, shape) in manifest {
            let numel: usize = shape.iter().product();
            let data: Vec<f32> = take(&mut pos, numel * 4)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push((name, shape, data));
        }
        Ok(Checkpoint {
            config_text,
            tensors,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
