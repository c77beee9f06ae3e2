//! Synthetic spectrally-disjoint mixtures.
//!
//! Two generator families draw sums of sinusoids from disjoint frequency
//! bands, so an oracle mask exists and desk-scale training provably has
//! something to learn. The mixture is the clipped sum of one source per
//! family.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::objective::SourceSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Sinusoids per source.
const MIN_SINUSOIDS: usize = 2;
const MAX_SINUSOIDS: usize = 4;
/// Per-sinusoid amplitude range before normalization.
const AMP_RANGE: (f64, f64) = (0.3, 1.0);
/// Every source is peak-normalized to this amplitude.
const PEAK: f64 = 0.7;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("frequency band {min_hz}..{max_hz} Hz is empty or non-positive")]
    BadBand { min_hz: f64, max_hz: f64 },
    #[error("source families overlap: {0}..{1} Hz vs {2}..{3} Hz")]
    OverlappingFamilies(f64, f64, f64, f64),
    #[error("band reaches {max_hz} Hz but Nyquist is {nyquist} Hz")]
    AboveNyquist { max_hz: f64, nyquist: f64 },
    #[error("dataset needs at least one item")]
    NoItems,
    #[error("duration must be positive")]
    NoDuration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreqBand {
    pub min_hz: f64,
    pub max_hz: f64,
}

/// Deterministic description of a synthetic two-speaker mixture set.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMixSpec {
    pub seed: u64,
    pub n_items: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub family_a: FreqBand,
    pub family_b: FreqBand,
}

impl SyntheticMixSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        for band in [self.family_a, self.family_b] {
            if !(band.min_hz > 0.0 && band.max_hz > band.min_hz) {
                return Err(DatasetError::BadBand {
                    min_hz: band.min_hz,
                    max_hz: band.max_hz,
                });
            }
            let nyquist = self.sample_rate as f64 / 2.0;
            if band.max_hz >= nyquist {
                return Err(DatasetError::AboveNyquist {
                    max_hz: band.max_hz,
                    nyquist,
                });
            }
        }
        let (a, b) = (self.family_a, self.family_b);
        if a.max_hz >= b.min_hz && b.max_hz >= a.min_hz {
            return Err(DatasetError::OverlappingFamilies(
                a.min_hz, a.max_hz, b.min_hz, b.max_hz,
            ));
        }
        if self.n_items == 0 {
            return Err(DatasetError::NoItems);
        }
        if self.duration_s <= 0.0 {
            return Err(DatasetError::NoDuration);
        }
        Ok(())
    }
}

/// One mixture with its clean references.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub mixture: AudioBuffer,
    pub sources: [AudioBuffer; 2],
}

impl DatasetItem {
    pub fn source_set<E: Scalar>(&self) -> SourceSet<E> {
        let n = self.sources[0].len();
        let mut data: Vec<E> = Vec::with_capacity(2 * n);
        for s in &self.sources {
            data.extend(
                s.samples()
                    .iter()
                    .map(|&v| crate::scalar::lit::<E>(v as f64)),
            );
        }
        SourceSet::new(Tensor::from_vec(data, &[2, n])).expect("two equal-length sources")
    }
}

fn render_source(band: FreqBand, n: usize, sample_rate: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let count = rng.gen_range(MIN_SINUSOIDS..=MAX_SINUSOIDS);
    let components: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.gen_range(band.min_hz..band.max_hz),
                rng.gen_range(AMP_RANGE.0..AMP_RANGE.1),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut samples = vec![0.0f64; n];
    for (freq, amp, phase) in components {
        let w = std::f64::consts::TAU * freq / sample_rate;
        for (t, s) in samples.iter_mut().enumerate() {
            *s += amp * (w * t as f64 + phase).sin();
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = if peak > 0.0 { PEAK / peak } else { 0.0 };
    samples.iter().map(|&v| (v * scale) as f32).collect()
}

/// Generates the full item list; deterministic in the spec's seed.
pub fn generate_dataset(spec: &SyntheticMixSpec) -> Result<Vec<DatasetItem>, DatasetError> {
    spec.validate()?;
    let n = (spec.duration_s * spec.sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut items = Vec::with_capacity(spec.n_items);
    for _ in 0..spec.n_items {
        let a = render_source(spec.family_a, n, spec.sample_rate as f64, &mut rng);
        let b = render_source(spec.family_b, n, spec.sample_rate as f64, &mut rng);
        let mixture: Vec<f32> = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x + y).clamp(-1.0, 1.0))
            .collect();
        items.push(DatasetItem {
            mixture: AudioBuffer::new(mixture, spec.sample_rate).unwrap(),
            sources: [
                AudioBuffer::new(a, spec.sample_rate).unwrap(),
                AudioBuffer::new(b, spec.sample_rate).unwrap(),
            ],
        });
    }
    Ok(items)
}

/// Train/validation split by item index parity: even indices train, odd
/// validate.
pub fn split_by_parity(items: Vec<DatasetItem>) -> (Vec<DatasetItem>, Vec<DatasetItem>) {
    let mut train = Vec::with_capacity(items.len() / 2 + 1);
    let mut valid = Vec::with_capacity(items.len() / 2);
    for (i, item) in items.into_iter().enumerate() {
        if i % 2 == 0 {
            train.push(item);
        } else {
            valid.push(item);
        }
    }
    (train, valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticMixSpec {
        SyntheticMixSpec {
            seed: 42,
            n_items: 4,
            duration_s: 0.25,
            sample_rate: 8000,
            family_a: FreqBand {
                min_hz: 100.0,
                max_hz: 900.0,
            },
            family_b: FreqBand {
                min_hz: 1100.0,
                max_hz: 1900.0,
            },
        }
    }

    #[test]
    fn same_seed_same_first_item() {
        let a = generate_dataset(&spec()).unwrap();
        let b = generate_dataset(&spec()).unwrap();
        assert_eq!(a[0].mixture.samples(), b[0].mixture.samples());
        assert_eq!(a[0].sources[0].samples(), b[0].sources[0].samples());
    }

    #[test]
    fn mixture_is_clipped_sum_of_references() {
        for item in generate_dataset(&spec()).unwrap() {
            for ((&m, &a), &b) in item
                .mixture
                .samples()
                .iter()
                .zip(item.sources[0].samples())
                .zip(item.sources[1].samples())
            {
                assert!((m - (a + b).clamp(-1.0, 1.0)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn family_a_has_no_energy_above_1khz() {
        // Discrete Fourier magnitude oracle, evaluated directly.
        let items = generate_dataset(&spec()).unwrap();
        let x = items[0].sources[0].samples();
        let n = x.len();
        let sr = 8000.0;
        let mut low = 0.0f64;
        let mut high = 0.0f64;
        for k in 1..n / 2 {
            let f = k as f64 * sr / n as f64;
            let (mut re, mut im) = (0.0f64, 0.0f64);
            let w = -std::f64::consts::TAU * k as f64 / n as f64;
            for (t, &v) in x.iter().enumerate() {
                let ang = w * t as f64;
                re += v as f64 * ang.cos();
                im += v as f64 * ang.sin();
            }
            let mag2 = re * re + im * im;
            if f > 1000.0 {
                high += mag2;
            } else {
                low += mag2;
            }
        }
        assert!(
            high < 1e-3 * low,
            "energy above 1 kHz: {high:.3e} vs below: {low:.3e}"
        );
    }

    #[test]
    fn parity_split() {
        let items = generate_dataset(&spec()).unwrap();
        let first_train = items[0].mixture.samples().to_vec();
        let first_valid = items[1].mixture.samples().to_vec();
        let (train, valid) = split_by_parity(items);
        assert_eq!(train.len(), 2);
        assert_eq!(valid.len(), 2);
        assert_eq!(train[0].mixture.samples(), &first_train[..]);
        assert_eq!(valid[0].mixture.samples(), &first_valid[..]);
    }

    #[test]
    fn overlapping_families_rejected() {
        let mut s = spec();
        s.family_b.min_hz = 500.0;
        assert!(matches!(
            generate_dataset(&s),
            Err(DatasetError::OverlappingFamilies(..))
        ));
    }
}
