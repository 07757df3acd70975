mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::{read_config_file, resolve, Globals, UsageError};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

/// Deep factor return models: synthetic data, walk-forward backtests and
/// relevance-based explanations.
#[derive(Debug, Parser)]
#[command(name = "deepfactor", version)]
struct Cli {
    /// JSON file of settings; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for data generation and model initialization [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 uses every core [default: 0]
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic panel with a known return function.
    Synth(SynthArgs),
    /// Run a walk-forward quintile backtest.
    Backtest(BacktestArgs),
    /// Decompose predictions into per-input relevance and factor shares.
    Explain(ExplainArgs),
    /// Fit the model for a single target month.
    Train(TrainArgs),
    /// Combine backtest reports into one summary table.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Number of stocks [default: 500]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stocks: Option<usize>,
    /// Number of months [default: 120]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    months: Option<usize>,
    /// Return function [default: nonlinear]
    #[arg(long, value_parser = ["linear", "nonlinear"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    truth: Option<String>,
    /// Standard deviation of the return noise [default: 0.05]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<f64>,
    /// AR(1) coefficient of the descriptor processes [default: 0.9]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    persistence: Option<f64>,
    /// First month, YYYY-MM [default: 2000-01]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Panel CSV
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    panel: Option<PathBuf>,
    /// Winsorize and z-score each month's descriptors before use
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    standardize: bool,
    /// Model family [default: deep1]
    #[arg(long, value_parser = ["deep1", "deep2", "linear"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<String>,
    /// Custom hidden widths for a deep model, e.g. 32,16
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    /// Months of training samples per refit [default: 60]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    train_window: Option<usize>,
    /// Training epochs per refit [default: 100]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epochs: Option<usize>,
    /// Mini-batch size [default: 64]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    /// Ridge penalty of the linear model [default: 0]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ridge: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct BacktestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// First target month, YYYY-MM [default: first feasible]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    start: Option<String>,
    /// Last target month, YYYY-MM [default: month after the panel ends]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    end: Option<String>,
    /// Number of portfolios [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    quantiles: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    model: ModelArgs,
    /// Target month, YYYY-MM [default: month after the panel ends]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    month: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct ExplainArgs {
    /// model.json written by `train`
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    model_file: Option<PathBuf>,
    /// Panel CSV
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    panel: Option<PathBuf>,
    /// Winsorize and z-score each month's descriptors before use
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    standardize: bool,
    /// Target month, YYYY-MM; inputs come from the month before [default: month after the panel ends]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    month: Option<String>,
    /// stock:<ID> or top-quintile [default: top-quintile]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target: Option<String>,
    /// Number of portfolios used to find the top one [default: 5]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    quantiles: Option<usize>,
    /// Epsilon of the relevance rule [default: 1e-9]
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    stabilizer: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// report.json files written by `backtest`
    #[serde(skip_serializing_if = "Vec::is_empty")]
    reports: Vec<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = read_config_file(cli.config.as_deref())?;
    let globals = Globals::resolve(&file, cli.seed, cli.jobs, cli.out)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(globals.jobs)
        .build_global()?;
    std::fs::create_dir_all(&globals.out)?;

    match cli.command {
        Command::Synth(a) => commands::synth(&globals, &resolve(&file, &a)?),
        Command::Backtest(a) => commands::backtest(&globals, resolve(&file, &a)?),
        Command::Explain(a) => commands::explain(&globals, resolve(&file, &a)?),
        Command::Train(a) => commands::train(&globals, resolve(&file, &a)?),
        Command::Report(a) => commands::report(&globals, &resolve(&file, &a)?),
    }
}

fn is_usage(err: &anyhow::Error) -> bool {
    use deepfactor::Error;
    err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<Error>(),
                Some(Error::InvalidConfig(_) | Error::InvalidSpec(_))
            )
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_usage(&e) => {
            eprintln!("error: {e:#}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
