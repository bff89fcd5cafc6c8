//! `trajdet`: simulate matches, train a detector, tune it and evaluate it.

mod commands;
mod config;
mod error;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use crate::config::{Overrides, RunConfig, WORKERS_ENV};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "trajdet", version, about = "Detect passes, receptions and shots from tracking data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Log level for the JSON-line log on stderr.
    #[arg(long, global = true, default_value = "info")]
    log_level: LevelFilter,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides TRAJDET_WORKERS and the config).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic matches and a train/val/test split.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        matches: Option<usize>,
        /// Output directory for trajectories, labels and dataset.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split, selecting the best epoch on val.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Model directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-frame probability timelines and detections.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: commands::SplitName,
        /// Thresholds from `tune`; the config's `detection` block otherwise.
        #[arg(long)]
        tuned: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search thresholds and NMS windows on the validation split.
    Tune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output JSON file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections on a split and print the metrics table.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: commands::SplitName,
        #[arg(long)]
        tuned: Option<PathBuf>,
        /// Output metrics CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine metrics files into one table, one section per run.
    Report {
        /// `NAME=path.csv`, repeatable.
        #[arg(long = "metrics", required = true, value_parser = parse_named)]
        metrics: Vec<(String, PathBuf)>,
    },
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=path, got {s:?}")),
    }
}

fn resolve(common: &Common, matches: Option<usize>, epochs: Option<usize>) -> Result<RunConfig, CliError> {
    let overrides = Overrides {
        seed: common.seed,
        matches,
        epochs,
        workers: common.workers,
    };
    RunConfig::load(common.config.as_deref())?.resolve(&overrides, std::env::var(WORKERS_ENV).ok())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { common, matches, out } => {
            let cfg = resolve(&common, matches, None)?;
            with_workers(&cfg, || commands::simulate(&cfg, &out))
        }
        Command::Train { common, data, epochs, out } => {
            let cfg = resolve(&common, None, epochs)?;
            with_workers(&cfg, || commands::train(&cfg, &data, &out))
        }
        Command::Infer {
            common,
            model,
            data,
            split,
            tuned,
            out,
        } => {
            let cfg = resolve(&common, None, None)?;
            with_workers(&cfg, || commands::infer(&cfg, &model, &data, split, tuned.as_deref(), &out))
        }
        Command::Tune { common, model, data, out } => {
            let cfg = resolve(&common, None, None)?;
            with_workers(&cfg, || commands::tune(&cfg, &model, &data, &out))
        }
        Command::Evaluate {
            common,
            model,
            data,
            split,
            tuned,
            out,
        } => {
            let cfg = resolve(&common, None, None)?;
            with_workers(&cfg, || commands::evaluate(&cfg, &model, &data, split, tuned.as_deref(), &out))
        }
        Command::Report { metrics } => commands::report(&metrics),
    }
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?
            .install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T>(_cfg: &RunConfig, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
    f()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    logging::init(cli.log_level);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
