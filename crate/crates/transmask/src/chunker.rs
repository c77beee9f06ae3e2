//! Segmentation of a sequence into 50%-overlapping chunks and its exact
//! inverse.
//!
//! A sequence of L frames is zero-padded at the tail to the smallest
//! L' >= max(L, 2P) divisible by the hop P; chunk s covers padded frames
//! [s*P, s*P + 2P). Overlap-add sums chunk contributions, divides by the
//! coverage count (1 at the first and last P frames, 2 elsewhere) and
//! truncates back to L, which makes the round trip exact.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::kernels::{chunk_count, padded_len};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ChunkError {
    #[error("inconsistent chunk geometry: {s} chunks of hop {hop} cannot come from {len} frames")]
    InconsistentGeometry { s: usize, hop: usize, len: usize },
}

/// Chunked view [D, 2P, S] of a [D, L] sequence plus the geometry to invert it.
#[derive(Debug, Clone)]
pub struct ChunkedRep<E: Scalar> {
    pub chunks: Tensor<E>,
    /// Hop length P in frames; chunks are 2P wide.
    pub hop: usize,
    /// Unpadded frame count of the source sequence.
    pub original_len: usize,
}

impl<E: Scalar> ChunkedRep<E> {
    pub fn chunk_width(&self) -> usize {
        2 * self.hop
    }

    pub fn n_chunks(&self) -> usize {
        self.chunks.shape()[2]
    }

    /// Same geometry with a different chunk tensor of identical shape.
    pub fn with_chunks(&self, chunks: Tensor<E>) -> ChunkedRep<E> {
        assert_eq!(
            chunks.shape(),
            self.chunks.shape(),
            "replacement chunks change shape: {:?} vs {:?}",
            chunks.shape(),
            self.chunks.shape()
        );
        ChunkedRep {
            chunks,
            hop: self.hop,
            original_len: self.original_len,
        }
    }

    /// Inverts [`segment`] exactly.
    pub fn overlap_add(&self) -> Result<Tensor<E>, ChunkError> {
        let s = self.n_chunks();
        if padded_len(self.original_len, self.hop) != (s + 1) * self.hop {
            return Err(ChunkError::InconsistentGeometry {
                s,
                hop: self.hop,
                len: self.original_len,
            });
        }
        Ok(self.chunks.overlap_add(self.hop, self.original_len))
    }
}

/// Splits a [D, L] sequence into overlapping chunks with hop `hop`.
pub fn segment<E: Scalar>(features: &Tensor<E>, hop: usize) -> ChunkedRep<E> {
    let original_len = features.shape()[1];
    ChunkedRep {
        chunks: features.segment(hop),
        hop,
        original_len,
    }
}

/// Chunk count produced by [`segment`] for a sequence of `l` frames.
pub fn chunks_for_len(l: usize, hop: usize) -> usize {
    chunk_count(l, hop)
}
