//! `semfuzz`: mine features, build training data, run fuzzing campaigns,
//! triage crashes and compute group/coverage metrics.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad usage or configuration,
//! 3 the compiler harness could not run the target compiler.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod data;
mod fuzz;
mod metrics;
mod models;
mod triage;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_HARNESS: u8 = 3;

#[derive(Parser)]
#[command(name = "semfuzz", version, about = "Feature-composition compiler fuzzer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract features from bug artifacts into a pool.
    Extract(data::ExtractArgs),
    /// Write masked-prediction training pairs.
    Traindata(data::TraindataArgs),
    /// Run (or resume) a fuzzing campaign.
    Fuzz(FuzzArgs),
    /// Bucket the crashes of a campaign.
    Triage(triage::TriageArgs),
    /// Coherence, Jaccard and validity metrics.
    #[command(subcommand)]
    Metrics(metrics::MetricsCommand),
}

#[derive(Args)]
pub struct FuzzArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub explain_config: bool,
    /// Continue from the snapshot in the output directory.
    #[arg(long)]
    pub resume: bool,
}

/// An error paired with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: e.into(),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: e.into(),
        }
    }
}

pub type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => data::extract(a),
        Command::Traindata(a) => data::traindata(a),
        Command::Fuzz(a) => fuzz::run(a),
        Command::Triage(a) => triage::run(a),
        Command::Metrics(c) => metrics::run(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
