//! `graphcnnpred`: prepare market data, train graph/CNN models, backtest
//! their predictions and render result tables.
//!
//! Exit codes: 0 success, 1 i/o, 2 config, 3 data, 4 training, 5 backtest.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Signals;
use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "graphcnnpred", version, about = "Correlation-graph CNN index trend prediction")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Directory of the five market files. Falls back to the config, then
    /// the GRAPHCNNPRED_DATA_DIR environment variable, then ./data.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Preset names, comma-separated or repeated.
    #[arg(long = "preset", global = true, value_delimiter = ',')]
    presets: Option<Vec<String>>,
    /// 65-15-20 or 42-8-50.
    #[arg(long, global = true)]
    split: Option<String>,
    /// 01 or 012.
    #[arg(long, global = true)]
    labeling: Option<String>,
    /// Correlation threshold in (0, 1].
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Align, label and normalise the market files and build the feature graph.
    Prepare,
    /// Train every (preset, seed) job on the prepared dataset.
    Train,
    /// Score trading strategies on the test segment.
    Backtest {
        /// Directory of prediction CSVs; defaults to <out>/predictions.
        #[arg(long, conflicts_with = "from_weights")]
        predictions: Option<PathBuf>,
        /// Run inference from saved weights instead of prediction files.
        #[arg(long)]
        from_weights: bool,
        /// Weight directory for --from-weights; defaults to <out>/weights.
        #[arg(long, requires = "from_weights")]
        weights: Option<PathBuf>,
        /// Only the always-long calibration row.
        #[arg(long, conflicts_with_all = ["predictions", "from_weights"])]
        always_long_only: bool,
    },
    /// Merge results and backtests into mean/best F-measure and Sharpe/CEQ tables.
    Report {
        /// Run directories to merge; defaults to --out.
        #[arg(long = "results")]
        results: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &cli.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        seeds: cli.seeds.clone(),
        presets: cli.presets.clone(),
        split: cli.split.clone(),
        labeling: cli.labeling.clone(),
        tau: cli.tau,
    });
    let res = cfg.resolve()?;
    match cli.command {
        Command::Prepare => commands::prepare(&res).map(drop),
        Command::Train => commands::train(&res).map(drop),
        Command::Backtest {
            predictions,
            from_weights,
            weights,
            always_long_only,
        } => {
            let signals = if always_long_only {
                Signals::None
            } else if from_weights {
                Signals::Weights(weights.unwrap_or_else(|| res.out.join("weights")))
            } else {
                let dir = predictions.unwrap_or_else(|| res.out.join("predictions"));
                if dir.is_dir() {
                    Signals::Predictions(dir)
                } else {
                    Signals::None
                }
            };
            commands::backtest(&res, &signals).map(drop)
        }
        Command::Report { results } => {
            let dirs = if results.is_empty() { vec![res.out.clone()] } else { results };
            commands::report(&dirs, &res.out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("graphcnnpred: {e}");
            e.exit_code()
        }
    }
}
