//! The `barrier-steer` command line.
//!
//! Exit codes: 0 success, 1 I/O or argument errors, 2 data-contract errors,
//! 3 verification failures.

mod bench;
mod commands;
mod compose;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use bench::{hardware_note, run_bench, BenchReport, HardwareNote, LatencyStats};
pub use commands::suite_verdict;
pub use compose::{compose_report, ComposeReport, ModeViolations};
pub use config::{BenchSection, PathsSection, RunConfig, TrainSection, VerifySection, ENV_PREFIX};

use crate::error::Error;
use crate::types::SteeringMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "barrier-steer",
    version,
    about = "Learned barrier functions and latent steering"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mode: Option<SteeringMode>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Primary output file (model, dump, records or report).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded synthetic dataset.
    GenSynth(GenSynthArgs),
    /// Train a barrier bank on a labeled dataset.
    Train(TrainArgs),
    /// Filter recorded trajectories through a trained bank.
    Steer(SteerArgs),
    /// Run an invariance, stabilization or negative-control suite.
    Verify(VerifyArgs),
    /// Merge several banks and compare violation rates on a test set.
    Compose(ComposeArgs),
    /// Time one steering call per mode against the iterative reference.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    TwoMoons,
    GaussianClusters,
    AnnulusVsCore,
    MultiConstraint,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long, value_enum, default_value = "two-moons")]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 500)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Defaults to 2, or 6 for the multi-constraint fixture.
    #[arg(long)]
    pub d_h: Option<usize>,
    /// Multi-constraint only.
    #[arg(long, default_value_t = 4)]
    pub categories: usize,
    /// Multi-constraint only.
    #[arg(long, default_value_t = 200)]
    pub sequences: usize,
    /// Multi-constraint only: transitions per sequence.
    #[arg(long, default_value_t = 24)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset: CBFA dump, or JSON lines for `.jsonl`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Loss history CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Training report JSON; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SteerArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Trajectory records, a CBFA dump or a JSON-lines dataset.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Trained bank; closed-form random banks are used when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub suite: Option<crate::dynamics::ScenarioKind>,
    #[arg(long)]
    pub scenarios: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// One bank per category; names come from the file stems.
    #[arg(long, num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    /// Shared test set: CBFA dump, trajectory records or JSON lines.
    #[arg(long)]
    pub data: PathBuf,
    /// Margin below which a state counts as a violation.
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Write the merged bank here.
    #[arg(long)]
    pub merged: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bank to time; a random neural bank of `--heads` x `--d-h` otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::Io(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Common envelope of every JSON report.
#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a RunConfig,
    pub report: T,
}

impl<'a, T: Serialize> Envelope<'a, T> {
    pub fn new(command: &'static str, config: &'a RunConfig, report: T) -> Self {
        Self {
            tool: "barrier-steer",
            version: crate::VERSION,
            command,
            config,
            report,
        }
    }
}

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Ok,
    /// The command ran but a checked property failed.
    VerificationFailed(String),
}

/// Parse `args` (including the program name) and run, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli) {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::VerificationFailed(msg)) => {
            eprintln!("verification failed: {msg}");
            EXIT_VERIFY
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
