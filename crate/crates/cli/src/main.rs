//! `rdm`: one subcommand per pipeline stage.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::artifacts::{LabeledPath, ScoreSpec};

#[derive(Debug, Parser)]
#[command(name = "rdm", version, about = "Feature-space diffusion OOD detection")]
struct Cli {
    /// key = value run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic multi-encoder scenario as FVEC files.
    Synth(SynthArgs),
    /// Train a score model on one encoder/fork.
    Train(TrainArgs),
    /// Per-sample log-likelihoods of a feature file.
    Loglik(LoglikArgs),
    /// Fit the ECDFs and threshold on ID validation scores.
    Calibrate(CalibrateArgs),
    /// Score test samples with a calibration bundle.
    Detect(DetectArgs),
    /// Encoder diagnostics.
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// AUROC and FPR@95 of ID versus OOD scores.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "tri-encoder")]
    scenario: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5000)]
    n_train: usize,
    #[arg(long, default_value_t = 5000)]
    n_val: usize,
    #[arg(long, default_value_t = 2000)]
    n_test: usize,
    #[arg(long, default_value_t = 1000)]
    n_ood: usize,
    /// Multiplier on every shift's magnitude.
    #[arg(long)]
    shift_strength: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    /// normed (Z-scored with train statistics) or unnormed.
    #[arg(long)]
    fork: rdm_core::Fork,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct LoglikArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Normalization statistics; defaults to `<model>.stats.json` when present.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// exact or hutchinson.
    #[arg(long)]
    mode: Option<rdm_core::DivergenceMode>,
    #[arg(long)]
    probes: Option<usize>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    probe_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// encoder:fork=path to ID validation scores; repeat per encoder and fork.
    #[arg(long = "scores", required = true)]
    scores: Vec<ScoreSpec>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long = "scores", required = true)]
    scores: Vec<ScoreSpec>,
    /// Re-read the threshold at this level from the stored validation scores.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum DiagnoseCmd {
    /// Class effect size of each model's log-likelihoods.
    Eta2 {
        #[arg(long = "scores", required = true)]
        scores: Vec<ScoreSpec>,
        /// FVEC file whose labels align with the scores.
        #[arg(long)]
        labels: PathBuf,
        /// Scores of the corrupted copy, same keys as --scores.
        #[arg(long = "corrupt-scores")]
        corrupt: Vec<ScoreSpec>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean log-likelihood drop under corruption.
    Dmu {
        #[arg(long = "clean", required = true)]
        clean: Vec<ScoreSpec>,
        #[arg(long = "corrupt", required = true)]
        corrupt: Vec<ScoreSpec>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Spearman matrix and greedy redundancy screening.
    Rho {
        /// label=path; repeat per model.
        #[arg(long = "scores", required = true)]
        scores: Vec<LabeledPath>,
        #[arg(long, default_value_t = rdm_core::diagnostics::DEFAULT_SCREEN_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// ID scores: a detect CSV (column s) or a raw score file.
    #[arg(long)]
    id: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    #[arg(long, default_value = "benchmark")]
    benchmark: String,
    /// Metrics CSV to append to.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<rdm_core::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
