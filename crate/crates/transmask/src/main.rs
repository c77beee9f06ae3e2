//! Command-line interface: train, separate, bench, gradcheck.
//!
//! stdout carries machine-readable output only (metric records, CSV,
//! check lines); diagnostics go to stderr. Exit codes: 0 success,
//! 1 usage or I/O failure, 2 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use transmask::audio::{read_wav, write_wav, WavEncoding};
use transmask::bench::{run_bench, BenchOptions};
use transmask::config::RunConfig;
use transmask::exec::ExecCtx;
use transmask::gradcheck;
use transmask::separator::{Model, SeparatorKind};
use transmask::trainer::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use transmask::trainer::dataset::generate_dataset;
use transmask::trainer::{train, TrainError, TrainOptions};

const EXIT_USAGE_OR_IO: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

#[derive(Parser)]
#[command(
    name = "transmask",
    about = "Time-domain speech separation: dual-path recurrence with inter-chunk strided attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on synthetic spectrally-disjoint mixtures and write a checkpoint.
    Train {
        /// Flat key=value configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path; metrics land next to it as
        /// <out>.metrics.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Separate a mixture WAV into per-speaker WAVs.
    Separate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Worker threads for the chunk/offset independence points.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Benchmark inference across audio-length multipliers; both separator
    /// kinds run with the same dimensions.
    Bench {
        /// Checkpoint to benchmark; mutually exclusive with --random.
        #[arg(long, conflicts_with = "random")]
        ckpt: Option<PathBuf>,
        /// Use randomly initialized weights instead of a checkpoint.
        #[arg(long)]
        random: bool,
        /// Configuration file for --random (defaults to the full-scale
        /// configuration).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated audio-length multipliers.
        #[arg(long, default_value = "1,2,4,8")]
        mults: String,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Timed repetitions per row after one discarded warm-up.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Base audio length in seconds before multiplication.
        #[arg(long, default_value_t = 4.0)]
        base_seconds: f64,
        /// CSV output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the finite-difference gradient verification suite.
    Gradcheck {
        /// tiny | small
        #[arg(long, default_value = "small")]
        scale: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE_OR_IO,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Train {
            config,
            out,
            epochs,
            seed,
        } => cmd_train(&config, &out, epochs, seed),
        Command::Separate {
            ckpt,
            input,
            out_dir,
            workers,
        } => cmd_separate(&ckpt, &input, &out_dir, workers),
        Command::Bench {
            ckpt,
            random,
            config,
            mults,
            workers,
            reps,
            base_seconds,
            out,
            seed,
        } => cmd_bench(
            ckpt.as_deref(),
            random,
            config.as_deref(),
            &mults,
            workers,
            reps,
            base_seconds,
            &out,
            seed,
        ),
        Command::Gradcheck { scale } => cmd_gradcheck(&scale),
    };
    ExitCode::from(code)
}

/// Seed priority: flag, then config file, then TRANSMASK_SEED, then default.
fn load_run_config(path: Option<&Path>, seed_flag: Option<u64>) -> Result<RunConfig, String> {
    let mut cfg = RunConfig::default();
    if let Ok(env_seed) = std::env::var("TRANSMASK_SEED") {
        cfg.seed = env_seed
            .parse()
            .map_err(|_| format!("TRANSMASK_SEED is not an integer: {env_seed:?}"))?;
    }
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        cfg.apply_text(&text).map_err(|e| e.to_string())?;
    }
    if let Some(seed) = seed_flag {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(config: &Path, out: &Path, epochs: Option<usize>, seed: Option<u64>) -> u8 {
    let mut run = match load_run_config(Some(config), seed) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE_OR_IO;
        }
    };
    if let Some(e) = epochs {
        run.epochs = e;
    }
    let model_cfg = run.model_config();
    if let Err(e) = model_cfg.validate() {
        eprintln!("error: invalid configuration: {e}");
        return EXIT_USAGE_OR_IO;
    }
    let spec = run.mix_spec();
    let opts: TrainOptions = run.train_options();
    let mut lines = Vec::new();
    let outcome = train(&model_cfg, &spec, &opts, |record| {
        let line = record.to_json();
        println!("{line}");
        lines.push(line);
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(TrainError::Diverged { epoch, item, loss }) => {
            eprintln!("error: training diverged at epoch {epoch}, item {item} (loss {loss})");
            return EXIT_NUMERICAL;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE_OR_IO;
        }
    };
    let ckpt = Checkpoint::from_params(run.to_text(), &outcome.model.params);
    if let Err(e) = save_checkpoint(&ckpt, out) {
        eprintln!("error: cannot write checkpoint {}: {e}", out.display());
        return EXIT_USAGE_OR_IO;
    }
    let metrics_path = metrics_path_for(out);
    if let Err(e) = std::fs::write(&metrics_path, lines.join("\n") + "\n") {
        eprintln!(
            "error: cannot write metrics {}: {e}",
            metrics_path.display()
        );
        return EXIT_USAGE_OR_IO;
    }
    eprintln!(
        "trained {} epochs, best validation SI-SNRi {:.2} dB, checkpoint {}",
        outcome.records.len(),
        outcome.best_si_snri,
        out.display()
    );
    0
}

fn metrics_path_for(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().unwrap_or_default().to_os_string();
    name.push(".metrics.jsonl");
    ckpt.with_file_name(name)
}

fn load_model(ckpt_path: &Path) -> Result<(RunConfig, Model<f32>), String> {
    let ckpt = load_checkpoint(ckpt_path)
        .map_err(|e| format!("cannot load checkpoint {}: {e}", ckpt_path.display()))?;
    let run = RunConfig::from_text(&ckpt.config_text)
        .map_err(|e| format!("checkpoint config is invalid: {e}"))?;
    let cfg = run.model_config();
    let params = ckpt
        .into_params(&cfg)
        .map_err(|e| format!("checkpoint does not fit its own config: {e}"))?;
    Ok((
        run,
        Model {
            config: cfg,
            params,
        },
    ))
}

fn cmd_separate(ckpt: &Path, input: &Path, out_dir: &Path, workers: usize) -> u8 {
    let (_, model) = match load_model(ckpt) {
        Ok(m) => m,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE_OR_IO;
        }
    };
    let audio = match read_wav(input) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", input.display());
            return EXIT_USAGE_OR_IO;
        }
    };
    let ctx = ExecCtx::with_workers(workers);
    let sources = match model.separate_audio(&audio, &ctx) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE_OR_IO;
        }
    };
    if let Err(e) = std::fs::create_dir_all(out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return EXIT_USAGE_OR_IO;
    }
    for (i, source) in sources.iter().enumerate() {
        let path = out_dir.join(format!("spk{}.wav", i + 1));
        if let Err(e) = write_wav(source, &path, WavEncoding::Float32) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_USAGE_OR_IO;
        }
        println!("{}", path.display());
    }
    0
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    ckpt: Option<&Path>,
    random: bool,
    config: Option<&Path>,
    mults: &str,
    workers: usize,
    reps: usize,
    base_seconds: f64,
    out: &Path,
    seed: Option<u64>,
) -> u8 {
    let multipliers: Result<Vec<usize>, _> = mults
        .split(',')
        .map(|m| m.trim().parse::<usize>())
        .collect();
    let multipliers = match multipliers {
        Ok(m) if !m.is_empty() => m,
        _ => {
            eprintln!("error: --mults must be comma-separated positive integers, got {mults:?}");
            return EXIT_USAGE_OR_IO;
        }
    };
    let (run, primary) = if let Some(path) = ckpt {
        match load_model(path) {
            Ok(pair) => pair,
            Err(msg) => {
                eprintln!("error: {msg}");
                return EXIT_USAGE_OR_IO;
            }
        }
    } else if random {
        let run = match load_run_config(config, seed) {
            Ok(c) => c,
            Err(msg) => {
                eprintln!("error: {msg}");
                return EXIT_USAGE_OR_IO;
            }
        };
        let cfg = run.model_config();
        match Model::<f32>::new(cfg, run.seed) {
            Ok(m) => (run, m),
            Err(e) => {
                eprintln!("error: invalid configuration: {e}");
                return EXIT_USAGE_OR_IO;
            }
        }
    } else {
        eprintln!("error: pass --ckpt PATH or --random");
        return EXIT_USAGE_OR_IO;
    };

    // Counterpart with the other inter-chunk stage, same dimensions.
    let mut other_cfg = primary.config.clone();
    other_cfg.separator_kind = match primary.config.separator_kind {
        SeparatorKind::Strnn => SeparatorKind::DprnnBaseline,
        SeparatorKind::DprnnBaseline => SeparatorKind::Strnn,
    };
    let counterpart = match Model::<f32>::new(other_cfg, run.seed) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: cannot build counterpart model: {e}");
            return EXIT_USAGE_OR_IO;
        }
    };

    let mut base_run = run.clone();
    base_run.duration_s = base_seconds;
    base_run.n_items = 1;
    let base = match generate_dataset(&base_run.mix_spec()) {
        Ok(items) => items.into_iter().next().unwrap().mixture,
        Err(e) => {
            eprintln!("error: cannot synthesize benchmark audio: {e}");
            return EXIT_USAGE_OR_IO;
        }
    };

    let models = [
        (primary.config.separator_kind.as_str().to_string(), primary),
        (
            counterpart.config.separator_kind.as_str().to_string(),
            counterpart,
        ),
    ];
    let opts = BenchOptions {
        multipliers,
        workers,
        repetitions: reps,
        ..BenchOptions::default()
    };
    eprintln!(
        "benchmarking {} s base audio, multipliers {:?}, {} workers, {} repetitions",
        base_seconds, opts.multipliers, opts.workers, opts.repetitions
    );
    let report = run_bench(&models, &base, &opts);
    let csv = report.to_csv();
    if let Err(e) = std::fs::write(out, &csv) {
        eprintln!("error: cannot write {}: {e}", out.display());
        return EXIT_USAGE_OR_IO;
    }
    print!("{csv}");
    0
}

fn cmd_gradcheck(scale: &str) -> u8 {
    let scale = match scale {
        "tiny" => gradcheck::Scale::Tiny,
        "small" => gradcheck::Scale::Small,
        other => {
            eprintln!("error: --scale must be tiny or small, got {other:?}");
            return EXIT_USAGE_OR_IO;
        }
    };
    let report = gradcheck::run(scale);
    for check in &report.checks {
        println!(
            "op={} max_rel_err={:.3e} status={}",
            check.name,
            check.max_rel_err,
            if check.passed() { "ok" } else { "fail" }
        );
    }
    if report.passed() {
        eprintln!(
            "all {} checks within {:e} (worst {:.3e})",
            report.checks.len(),
            gradcheck::TOLERANCE,
            report.worst()
        );
        0
    } else {
        eprintln!("gradient check failed (worst {:.3e})", report.worst());
        EXIT_NUMERICAL
    }
}
