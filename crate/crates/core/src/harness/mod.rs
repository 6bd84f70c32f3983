//! Running the compiler under test: configuration, outcome classification,
//! crash signatures and coverage maps.

mod config;
mod coverage;
mod outcome;
mod run;
mod signature;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{CompilerConfig, CoverageMode, DEFAULT_FATAL_SIGNALS};
pub use coverage::{
    attribute_components, measure_coverage, merge_coverage, parse_bitmap, parse_line_report,
    CoverageMap, CoverageUnavailable, UnitKind, UnitKindMismatch,
};
pub use outcome::{classify_status, CompileOutcome, CrashPatterns, OutcomeStatus, RawObservation};
pub use run::{run_compile, CompilerHarness, OutcomeRecord, COVERAGE_ENV, OUTCOME_FILE};
pub use signature::{classify_crash, signature_from_stderr, CrashKind, CrashSignature, NotACrash};

use crate::instantiation::SourceProgram;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("compiler binary not found: {0}")]
    CompilerMissing(PathBuf),
    #[error("failed to spawn compiler: {0}")]
    Spawn(std::io::Error),
    #[error("harness i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid compiler configuration: {0}")]
    Config(String),
}

/// Everything one execution of a program tells the feedback loop.
#[derive(Debug, Clone)]
pub struct Execution {
    pub outcome: CompileOutcome,
    pub coverage: Result<CoverageMap, CoverageUnavailable>,
    /// A crash on a program that a reference compiler accepts.
    pub crash_counted_valid: bool,
}

/// Executes generated programs for the campaign driver.
pub trait Harness {
    fn execute(&mut self, iteration: u64, program: &SourceProgram) -> Result<Execution, HarnessError>;

    fn unit_kind(&self) -> UnitKind;
}
