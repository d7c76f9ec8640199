//! Batch pipeline behind the `wdn` binary.
//!
//! Subcommands exchange plain files: `data.csv` datasets, `labels.json` next
//! to them, model bundle directories, `predictions.csv`, `events.json` and
//! `metrics.json`.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod plot;
pub mod report;

/// Outcome of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct CommandResult {
    /// 0 on success, 1 on pipeline failure, 2 on usage or config failure.
    pub exit_code: u8,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A module operation failed; `op` names it.
    Pipeline {
        op: String,
        message: String,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Pipeline { .. } => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Pipeline { op, message } => write!(f, "{op} failed: {message}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Wraps any displayable error as a pipeline failure of `op`.
pub fn failed<E: fmt::Display>(op: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Pipeline { op: op.to_string(), message: e.to_string() }
}

#[derive(Parser, Debug)]
#[command(
    name = "wdn",
    version,
    about = "Pressure forecasting and anomaly detection for water distribution SCADA data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config with optional sections synth, forest, emd, cnn_emd, fusion, train, detect, anomalies.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic network dataset.
    Simulate {
        #[arg(long)]
        days: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Inject labelled anomalies and missing samples into a dataset.
    Inject {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        /// Fraction of samples per channel to mark missing.
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fill missing samples with calendar-feature random forests.
    Impute {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Autocorrelation and partial autocorrelation of one column.
    Acf {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        #[arg(long, default_value_t = 192)]
        lags: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical mode decomposition of one column.
    Decompose {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        #[command(flatten)]
        common: Common,
    },
    /// Hilbert spectrum of the IMFs of one column.
    Hht {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train the CNN-EMD forecaster on one column.
    TrainForecaster {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train the fusion inlet-pressure model.
    TrainFusion {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// One-step-ahead predictions from a trained bundle.
    Predict {
        #[arg(long = "in")]
        input: PathBuf,
        /// Bundle directory written by train-forecaster or train-fusion.
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        #[command(flatten)]
        common: Common,
    },
    /// Flag anomalies from prediction residuals.
    Detect {
        /// predictions.csv written by predict.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "inlet_pressure")]
        sensor: String,
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Forecast and detection metrics with a markdown summary.
    Eval {
        /// predictions.csv written by predict.
        #[arg(long = "in")]
        input: PathBuf,
        /// events.json written by detect.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Ground-truth labels.json.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> CommandResult
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            return CommandResult { exit_code: code, artifacts: Vec::new(), summary: e.to_string() };
        }
    };
    match commands::execute(cli.command) {
        Ok((artifacts, summary)) => CommandResult { exit_code: 0, artifacts, summary },
        Err(e) => CommandResult { exit_code: e.exit_code(), artifacts: Vec::new(), summary: e.to_string() },
    }
}
