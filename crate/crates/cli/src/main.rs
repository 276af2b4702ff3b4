//! `fetree`: fit, apply and evaluate tree-structured fixed-effects models.

mod commands;
mod config;
mod summary;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit status for usage and configuration errors (same as clap's).
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 1;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "fetree", version, about = "Tree-structured fixed-effects regression for clustered data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write the model document, CV curve and a summary.
    Fit(FitArgs),
    /// Predict outcomes for a data file with a fitted model.
    Predict(PredictArgs),
    /// Run simulation replications and write the raw results table.
    Simulate(SimulateArgs),
    /// Summarise a results table as Markdown plus RMSE quartiles.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Ttsc,
    Ltsc,
    Ltscb,
    Null,
    Lmm,
}

#[derive(Args, Debug, Default)]
pub struct FitArgs {
    /// TOML file with any of the options below; flags override it [default: none]
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Input CSV with a header row [default: `data` from the config]
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Outcome column [default: y]
    #[arg(long, value_name = "COL")]
    pub outcome: Option<String>,
    /// Unit (grouping) column [default: unit]
    #[arg(long, value_name = "COL")]
    pub unit: Option<String>,
    /// Comma-separated covariate columns [default: all other columns]
    #[arg(long, value_name = "C1,C2,...", value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Covariate kind overrides such as `x7=binary,x3=ordinal` [default: inferred]
    #[arg(long, value_name = "NAME=KIND", value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// Model to fit [default: ttsc]
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Maximal number of splits over both trees [default: 20]
    #[arg(long, value_name = "S")]
    pub max_splits: Option<usize>,
    /// Minimal observations per node [default: floor(0.1 * N)]
    #[arg(long, value_name = "B")]
    pub min_bucket: Option<usize>,
    /// Maximal depth of each tree [default: unlimited]
    #[arg(long, value_name = "D")]
    pub max_depth: Option<usize>,
    /// Cross-validation folds [default: 10]
    #[arg(long, value_name = "K")]
    pub folds: Option<usize>,
    /// Use the one-standard-error rule, or the CV maximum when false [default: true]
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub one_se: Option<bool>,
    /// Seed for fold assignment [default: 1]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Model document path [default: model.json]
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// CV curve CSV path [default: <out stem>.cv.csv]
    #[arg(long, value_name = "FILE")]
    pub cv_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model document written by `fit`.
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// CSV with the unit column and the model's covariates.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Unit column in the data [default: unit]
    #[arg(long, value_name = "COL", default_value = "unit", hide_default_value = true)]
    pub unit: String,
    /// Output CSV [default: predictions.csv]
    #[arg(long, value_name = "FILE", default_value = "predictions.csv", hide_default_value = true)]
    pub out: PathBuf,
    /// Predict unseen units from the average intercept instead of failing [default: off]
    #[arg(long)]
    pub allow_unseen_units: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenarios, comma-separated [default: 1]
    #[arg(long, value_delimiter = ',', default_value = "1", hide_default_value = true,
          value_parser = clap::value_parser!(u8).range(1..=4))]
    pub scenario: Vec<u8>,
    /// Settings, comma-separated [default: 1]
    #[arg(long, value_delimiter = ',', default_value = "1", hide_default_value = true,
          value_parser = clap::value_parser!(u8).range(1..=6))]
    pub setting: Vec<u8>,
    /// Replications per (scenario, setting) [default: 100]
    #[arg(long, value_name = "R", default_value_t = 100, hide_default_value = true)]
    pub reps: usize,
    /// Models: ttsc, ltsc, ltscb, lmm, null, perfect [default: all]
    #[arg(long, value_delimiter = ',', value_name = "LIST")]
    pub models: Option<Vec<String>>,
    /// Base seed [default: 1]
    #[arg(long, value_name = "N", default_value_t = DEFAULT_SEED, hide_default_value = true)]
    pub seed: u64,
    /// Worker threads [default: all cores]
    #[arg(long, value_name = "W", value_parser = clap::value_parser!(usize))]
    pub workers: Option<usize>,
    /// Results CSV [default: results.csv]
    #[arg(long, value_name = "FILE", default_value = "results.csv", hide_default_value = true)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Results CSV written by `simulate`.
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Markdown summary [default: summary.md]
    #[arg(long, value_name = "FILE", default_value = "summary.md", hide_default_value = true)]
    pub out: PathBuf,
    /// RMSE quartile CSV [default: <out stem>.quartiles.csv]
    #[arg(long, value_name = "FILE")]
    pub quartiles: Option<PathBuf>,
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_USAGE, error: error.into() }
    }
}

macro_rules! runtime_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Self { code: EXIT_RUNTIME, error: e.into() }
            }
        }
    )*};
}

runtime_failure!(anyhow::Error, fetree::Error, std::io::Error, csv::Error);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Predict(a) => commands::predict(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
