//! Command-line front end: data ingestion, configuration, dispatch, and
//! report emission.
//!
//! Exit codes: 0 success; 1 failed validation or internal error; 2 malformed
//! input (with line/column diagnostics); 3 estimable-but-empty target (no
//! complete cases / no events); 4 unwritable output.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod ingest;
mod report;

use report::Format;

#[derive(Debug)]
pub enum CliError {
    /// Malformed input or configuration (exit 2).
    Input(String),
    /// Structurally valid input with nothing to estimate (exit 3).
    Empty(String),
    /// Output path cannot be written (exit 4).
    Output(String),
    /// A validation gate failed (exit 1).
    Validation(String),
    /// Anything else (exit 1).
    Other(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Empty(_) => 3,
            CliError::Output(_) => 4,
            CliError::Validation(_) | CliError::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m)
            | CliError::Empty(m)
            | CliError::Output(m)
            | CliError::Validation(m)
            | CliError::Other(m) => m,
        }
    }
}

/// Maps library errors onto the exit-code contract.
pub fn core_err(e: hierest::Error) -> CliError {
    match e {
        hierest::Error::NoCompleteCases | hierest::Error::NoEvents => {
            CliError::Empty(e.to_string())
        }
        other => CliError::Input(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    Known,
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    MeanVector,
    ChangeScore,
    CompoundSymmetry,
    Shift,
}

#[derive(Parser)]
#[command(
    name = "hierest",
    version,
    about = "Hierarchical variance-optimal estimation under missing data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate moment parameters from a CSV with missing cells.
    Estimate(EstimateArgs),
    /// Recursive CDF for right-censored (time, event) data.
    Km(KmArgs),
    /// Bivariate closed-form estimators.
    Bivariate(BivariateArgs),
    /// Run a seeded Monte Carlo study and report it.
    Simulate(StudyArgs),
    /// Run a study and exit nonzero if any of its checks fail.
    Validate(StudyArgs),
}

#[derive(Args)]
pub struct EstimateArgs {
    /// CSV input with a header row; cells are numbers or the missing token.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON config with the parameter list and covariance mode.
    #[arg(long)]
    pub config: PathBuf,
    /// Cell content treated as missing (empty cells always are).
    #[arg(long, default_value = "NA")]
    pub missing_token: String,
    /// Covariance mode; overrides the config.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Restrict the hierarchy to the monotone dropout chain.
    #[arg(long)]
    pub monotone: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct KmArgs {
    /// Two-column CSV: time, event flag (1 = observed, 0 = censored).
    #[arg(long)]
    pub input: PathBuf,
    /// Also run the product-limit oracle and report the max deviation.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct BivariateArgs {
    /// Which closed form to evaluate.
    #[arg(long, value_enum)]
    pub variant: Variant,
    /// Raw two-column CSV with missing markers.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Explicit means/sigma/sizes as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "NA")]
    pub missing_token: String,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct StudyArgs {
    /// Study spec as JSON (population, mechanism, sizes, estimators).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Estimate(args) => commands::estimate(&args),
        Command::Km(args) => commands::km(&args),
        Command::Bivariate(args) => commands::bivariate(&args),
        Command::Simulate(args) => commands::simulate(&args, false),
        Command::Validate(args) => commands::simulate(&args, true),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("hierest: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
