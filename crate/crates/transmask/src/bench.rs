//! Inference benchmark: sequential-step accounting and wall-clock/rtf
//! measurement over audio-length multipliers.
//!
//! The deterministic pass/fail signal is the sequential-step count — the
//! longest chain of inherently ordered recurrence steps in one forward
//! pass. For the attention separator that chain is the intra-chunk
//! recurrence alone (n_layers * 2P, independent of audio length); for the
//! recurrent baseline the inter-chunk scan adds the chunk count, which
//! grows with the input. Wall time and rtf are reported for humans, never
//! asserted.

use std::time::Instant;

use crate::audio::AudioBuffer;
use crate::chunker::chunks_for_len;
use crate::exec::{ExecCtx, StepTally};
use crate::frontend::frame_count;
use crate::separator::{Model, ModelConfig, SeparatorKind};

/// One benchmark measurement. `wall_s`/`rtf` are `None` when the run
/// failed (the row is kept so the report schema is stable).
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub model: String,
    pub mult: usize,
    pub audio_s: f64,
    pub wall_s: Option<f64>,
    pub rtf: Option<f64>,
    pub seq_steps: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "model,mult,audio_s,wall_s,rtf,seq_steps,workers";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let wall = row.wall_s.map_or("nan".into(), |v| format!("{v:.6}"));
            let rtf = row.rtf.map_or("nan".into(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{},{},{:.3},{},{},{},{}\n",
                row.model, row.mult, row.audio_s, wall, rtf, row.seq_steps, row.workers
            ));
        }
        out
    }
}

/// Closed-form longest chain of ordered recurrence steps for one forward
/// pass over `frames` encoded frames.
pub fn count_sequential_steps(cfg: &ModelConfig, frames: usize) -> u64 {
    let width = cfg.chunk_width() as u64;
    match cfg.separator_kind {
        SeparatorKind::Strnn => cfg.n_layers as u64 * width,
        SeparatorKind::DprnnBaseline => {
            let chunks = chunks_for_len(frames, cfg.chunk_hop) as u64;
            cfg.n_layers as u64 * (width + chunks)
        }
    }
}

/// Sequential steps for a waveform of `n` samples under `cfg`'s frontend.
pub fn count_sequential_steps_for_samples(cfg: &ModelConfig, n: usize) -> u64 {
    count_sequential_steps(cfg, frame_count(n, cfg.enc_kernel, cfg.enc_stride))
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub multipliers: Vec<usize>,
    pub workers: usize,
    /// Timed repetitions after one discarded warm-up.
    pub repetitions: usize,
    /// Rough activation-footprint ceiling; a run estimated above it is
    /// marked failed instead of attempted.
    pub memory_budget_bytes: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            multipliers: vec![1, 2, 4, 8],
            workers: 1,
            repetitions: 5,
            memory_budget_bytes: 16 << 30,
        }
    }
}

/// Coarse upper bound on transient activation memory for one forward pass.
fn approx_activation_bytes(cfg: &ModelConfig, frames: usize) -> usize {
    let s = chunks_for_len(frames, cfg.chunk_hop);
    let width = cfg.chunk_width();
    let chunk_elems = cfg.d_model * width * s;
    let attention_elems = width * s * s * cfg.n_heads;
    let per_layer = chunk_elems * 8 + attention_elems;
    (cfg.n_layers * per_layer + 4 * chunk_elems) * std::mem::size_of::<f32>()
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Benchmarks each `(label, model)` across the audio-length multipliers.
/// The forward pass runs masks-to-waveform end to end on frozen weights.
pub fn run_bench(
    models: &[(String, Model<f32>)],
    base: &AudioBuffer,
    opts: &BenchOptions,
) -> BenchReport {
    let mut report = BenchReport::default();
    for (label, model) in models {
        let frozen = model.frozen();
        for &mult in &opts.multipliers {
            let audio = base.repeat(mult);
            let audio_s = audio.duration_seconds();
            let frames = frame_count(
                audio.len(),
                model.config.enc_kernel,
                model.config.enc_stride,
            );
            // Instrumented run: the tally from the real forward pass is the
            // reported step count (it equals the closed form; see tests).
            let tally = StepTally::new();
            let ctx = ExecCtx::with_workers(opts.workers).with_tally(tally.clone());
            let samples: Vec<f32> = audio.samples().to_vec();

            let mut row = BenchRow {
                model: label.clone(),
                mult,
                audio_s,
                wall_s: None,
                rtf: None,
                seq_steps: count_sequential_steps(&model.config, frames),
                workers: opts.workers,
            };
            if approx_activation_bytes(&model.config, frames) > opts.memory_budget_bytes {
                report.rows.push(row);
                continue;
            }
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                // warm-up, instrumented
                frozen.estimate_sources(&samples, &ctx).map(|_| ())?;
                let mut walls = Vec::with_capacity(opts.repetitions);
                let plain = ExecCtx::with_workers(opts.workers);
                for _ in 0..opts.repetitions.max(1) {
                    let started = Instant::now();
                    frozen.estimate_sources(&samples, &plain)?;
                    walls.push(started.elapsed().as_secs_f64());
                }
                Ok::<Vec<f64>, crate::separator::ModelError>(walls)
            }));
            if let Ok(Ok(mut walls)) = outcome {
                row.seq_steps = tally.total();
                let wall = median(&mut walls);
                row.wall_s = Some(wall);
                row.rtf = Some(wall / audio_s);
            }
            report.rows.push(row);
        }
    }
    report
}
