//! Command-line driver for alc3-core: data generation, noise injection, correction
//! runs (oracle, replay or live annotation service), reports and sweeps.

pub mod commands;
pub mod config;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use alc3_core::engine::Strategy;
use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
/// The run ended without a stop rule firing (iteration cap or nothing left to flag).
pub const EXIT_BUDGET: u8 = 4;
/// A live session was closed before the iteration's annotations were complete.
pub const EXIT_PAUSED: u8 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] alc3_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use alc3_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config { .. }) => EXIT_USAGE,
            CliError::Core(E::Annotator(alc3_core::annotator::AnnotatorError::SessionClosed { .. })) => EXIT_PAUSED,
            CliError::Data(_) | CliError::Core(_) => EXIT_DATA,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "alc3",
    version,
    about = "Iterative label correction with misannotation prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Text,
    Sequence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Random,
    #[value(alias = "label")]
    LabelConditional,
    #[value(alias = "input")]
    InputConditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AnnotatorArg {
    Oracle,
    Replay,
    Serve,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    M,
    Datasize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with ground truth (clean labels).
    Generate {
        #[arg(long, value_enum, default_value = "text")]
        task: TaskArg,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Number of classes (text task only).
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write a held-out split of this fraction to `--test-out`.
        #[arg(long, requires = "test_out")]
        test_fraction: Option<f64>,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Corrupt a fraction of labels; writes the noised JSONL and a provenance sidecar.
    InjectNoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: NoiseArg,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label_space: Option<PathBuf>,
    },
    /// Run the correction loop until a stop rule fires.
    Run(RunArgs),
    /// Run the correction loop with annotations collected over HTTP.
    Serve(RunArgs),
    /// Regenerate history, curves and report.md for a run directory.
    Report {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// First-iteration MP precision/recall across M values or data sizes.
    Sweep {
        #[arg(long, value_enum)]
        mode: SweepMode,
        #[arg(long)]
        dataset: PathBuf,
        /// M values (mode m) or data-size fractions (mode datasize).
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        /// Flag fraction for data-size sweeps.
        #[arg(long = "M", alias = "m", default_value_t = 0.025)]
        m: f64,
        #[arg(long, default_value_t = 0.9)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training settings are read from `[engine.train]`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        label_space: Option<PathBuf>,
        /// CSV output; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, Default, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub label_space: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long = "M", alias = "m")]
    pub m: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub oracle_reference: Option<f64>,
    #[arg(long, value_enum)]
    pub annotator: Option<AnnotatorArg>,
    /// Recorded responses for `--annotator replay`.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Annotator bearer token as NAME:TOKEN; repeatable. Enables authentication.
    #[arg(long = "token", value_parser = config::parse_token)]
    pub tokens: Vec<(String, String)>,
    #[arg(long)]
    pub lease_seconds: Option<u64>,
    #[arg(long)]
    pub console_dir: Option<PathBuf>,
    /// Stop the service once the run finishes instead of waiting for Ctrl-C.
    #[arg(long)]
    pub exit_when_done: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
