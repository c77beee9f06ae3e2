//! Mono waveform buffers and RIFF/WAVE file I/O.
//!
//! Reads PCM 16-bit integer and IEEE float 32-bit files, averaging
//! multi-channel content down to mono. Writing clamps samples to [-1, 1].
//! There is no resampling: a mismatch between a file's rate and the model
//! configuration is a hard error at the call site that pairs them.

use std::io;
use std::path::Path;

use thiserror::Error;

/// Sample rate assumed by the default configurations.
pub const DEFAULT_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed WAV at byte {offset}: {what}")]
    Malformed { offset: usize, what: String },
    #[error("unsupported WAV format: {what}")]
    Unsupported { what: String },
    #[error("audio buffer needs at least one sample")]
    Empty,
    #[error("sample rate must be positive")]
    ZeroSampleRate,
}

fn malformed(offset: usize, what: impl Into<String>) -> AudioError {
    AudioError::Malformed {
        offset,
        what: what.into(),
    }
}

/// Payload encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

/// Mono waveform at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        if sample_rate == 0 {
            return Err(AudioError::ZeroSampleRate);
        }
        Ok(AudioBuffer {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Tiles the samples `k` times; the sample rate is unchanged.
    pub fn repeat(&self, k: usize) -> AudioBuffer {
        assert!(k >= 1, "repeat count must be positive");
        let mut samples = Vec::with_capacity(self.samples.len() * k);
        for _ in 0..k {
            samples.extend_from_slice(&self.samples);
        }
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Parses a RIFF/WAVE byte stream into a mono buffer.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    let take = |offset: usize, len: usize| -> Result<&[u8], AudioError> {
        bytes
            .get(offset..offset + len)
            .ok_or_else(|| malformed(offset, format!("expected {len} bytes, file truncated")))
    };
    if take(0, 4)? != b"RIFF" {
        return Err(malformed(0, "missing RIFF tag"));
    }
    if take(8, 4)? != b"WAVE" {
        return Err(malformed(8, "missing WAVE tag"));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<(usize, usize)> = None; // offset, len
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = take(pos, 4)?;
        let size = u32::from_le_bytes(take(pos + 4, 4)?.try_into().unwrap()) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(malformed(
                pos + 4,
                format!("chunk size {size} exceeds file length"),
            ));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(malformed(
                        body,
                        format!("fmt chunk too small ({size} bytes)"),
                    ));
                }
                let f = u16::from_le_bytes(take(body, 2)?.try_into().unwrap());
                let ch = u16::from_le_bytes(take(body + 2, 2)?.try_into().unwrap());
                let rate = u32::from_le_bytes(take(body + 4, 4)?.try_into().unwrap());
                let bits = u16::from_le_bytes(take(body + 14, 2)?.try_into().unwrap());
                fmt = Some((f, ch, rate, bits));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1); // chunks are word-aligned
    }

    let (format, channels, rate, bits) = fmt.ok_or_else(|| malformed(12, "no fmt chunk found"))?;
    let (data_off, data_len) = data.ok_or_else(|| malformed(12, "no data chunk found"))?;
    if channels == 0 {
        return Err(malformed(data_off, "zero channels"));
    }
    if rate == 0 {
        return Err(malformed(data_off, "zero sample rate"));
    }

    let interleaved: Vec<f32> = match (format, bits) {
        (1, 16) => take(data_off, data_len)?
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        (3, 32) => take(data_off, data_len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        (f, b) => {
            return Err(AudioError::Unsupported {
                what: format!("format code {f} with {b} bits per sample (need PCM16 or float32)"),
            })
        }
    };

    let ch = channels as usize;
    let frames = interleaved.len() / ch;
    if frames == 0 {
        return Err(malformed(data_off, "data chunk holds no complete frame"));
    }
    let mono: Vec<f32> = (0..frames)
        .map(|f| interleaved[f * ch..(f + 1) * ch].iter().sum::<f32>() / ch as f32)
        .collect();
    AudioBuffer::new(mono, rate)
}

/// Serializes a mono buffer as RIFF/WAVE; samples are clamped to [-1, 1].
pub fn encode_wav_bytes(buffer: &AudioBuffer, encoding: WavEncoding) -> Vec<u8> {
    let n = buffer.len();
    let (format_code, bits): (u16, u16) = match encoding {
        WavEncoding::Pcm16 => (1, 16),
        WavEncoding::Float32 => (3, 32),
    };
    let bytes_per_sample = (bits / 8) as usize;
    let data_len = n * bytes_per_sample;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format_code.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&buffer.sample_rate().to_le_bytes());
    let byte_rate = buffer.sample_rate() * bytes_per_sample as u32;
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&(bytes_per_sample as u16).to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buffer.samples() {
        let clamped = s.clamp(-1.0, 1.0);
        match encoding {
            WavEncoding::Pcm16 => {
                let v = (clamped as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            WavEncoding::Float32 => out.extend_from_slice(&clamped.to_le_bytes()),
        }
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    let bytes = std::fs::read(path)?;
    decode_wav_bytes(&bytes)
}

pub fn write_wav(
    buffer: &AudioBuffer,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<(), AudioError> {
    std::fs::write(path, encode_wav_bytes(buffer, encoding))?;
    Ok(())
}
