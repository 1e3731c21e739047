//! `jtve`: train, evaluate, sample from and score with jointly trained
//! VAE + latent EBM models.
//!
//! stdout carries only JSON (or sample bytes when writing to `-`); logs go
//! to stderr, filtered by `JTVE_LOG`.

mod commands;
mod overrides;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jtve_core::Error;

#[derive(Parser, Debug)]
#[command(name = "jtve", version, about = "Joint training of a VAE and a latent energy-based model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScoreKind {
    /// −f_α(x, μ_φ(x)).
    Energy,
    /// Negative ELBO, for models trained without the energy term.
    Elbo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Rmse,
    Auroc,
    Auprc,
    Mmd,
    Histogram,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; prints a JSON summary.
    Train {
        /// JSON config; defaults apply to missing keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted override applied after the file, e.g. trainer.seed=7.
        #[arg(long = "set", value_name = "K=V")]
        sets: Vec<String>,
        /// Continue the run saved in this checkpoint.
        #[arg(long, conflicts_with_all = ["config", "sets"])]
        resume: Option<PathBuf>,
    },
    /// Compute metrics for a checkpoint; prints {metric: value}.
    Eval {
        checkpoint: PathBuf,
        /// Normal / in-distribution dataset spec.
        #[arg(long)]
        data: String,
        /// Dataset spec whose samples count as anomalies.
        #[arg(long)]
        ood: Option<String>,
        /// Class of `--data` that counts as anomalous.
        #[arg(long)]
        holdout: Option<u32>,
        #[arg(long, value_delimiter = ',', required = true)]
        metrics: Vec<Metric>,
        #[arg(long, value_enum, default_value = "energy")]
        score: ScoreKind,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a grid of generator samples (PGM for 28×28 images, CSV otherwise).
    Sample {
        checkpoint: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-sample anomaly scores; prints {"scores": [...]}.
    Score {
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, value_enum, default_value = "energy")]
        score: ScoreKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// 0 success, 2 config/usage, 3 numeric failure, 4 I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        Error::Io { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("JTVE_LOG", "info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train { config, sets, resume } => commands::train(config.as_deref(), &sets, resume.as_deref()),
        Command::Eval { checkpoint, data, ood, holdout, metrics, score, bins, seed } => commands::eval(
            &checkpoint,
            &commands::EvalArgs { data, ood, holdout, metrics, score, bins, seed },
        ),
        Command::Sample { checkpoint, rows, cols, out, seed } => commands::sample(&checkpoint, rows, cols, &out, seed),
        Command::Score { checkpoint, data, score, seed } => commands::score(&checkpoint, &data, score, seed),
    };
    match result {
        Ok(payload) => {
            println!("{payload}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
