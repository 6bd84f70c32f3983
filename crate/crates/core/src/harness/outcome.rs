use regex::RegexSet;
use serde::{Deserialize, Serialize};

use super::config::CompilerConfig;
use crate::instantiation::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Valid,
    Reject,
    Crash,
    Hang,
    Oom,
}

/// What was observed about one compiler process, before interpretation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawObservation {
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub timed_out: bool,
    pub stderr: String,
    pub stderr_truncated: bool,
}

/// Compiled pattern sets used by [`classify_status`].
#[derive(Debug, Clone)]
pub struct CrashPatterns {
    crash: RegexSet,
    oom: RegexSet,
    fatal_signals: Vec<i32>,
}

impl CrashPatterns {
    pub fn from_config(cfg: &CompilerConfig) -> Result<Self, regex::Error> {
        Ok(CrashPatterns {
            crash: RegexSet::new(&cfg.crash_patterns)?,
            oom: RegexSet::new(&cfg.oom_patterns)?,
            fatal_signals: cfg.fatal_signals.clone(),
        })
    }

    pub fn defaults() -> Self {
        CrashPatterns {
            crash: RegexSet::new(super::config::default_crash_patterns()).unwrap(),
            oom: RegexSet::new(super::config::default_oom_patterns()).unwrap(),
            fatal_signals: super::config::DEFAULT_FATAL_SIGNALS.to_vec(),
        }
    }
}

/// Map an observation to a status:
/// deadline exceeded -> Hang; memory exhaustion (diagnostic or SIGKILL) ->
/// Oom; crash banner or fatal signal -> Crash; exit 0 -> Valid; else Reject.
pub fn classify_status(obs: &RawObservation, patterns: &CrashPatterns) -> OutcomeStatus {
    if obs.timed_out {
        return OutcomeStatus::Hang;
    }
    if patterns.oom.is_match(&obs.stderr) || obs.signal == Some(libc::SIGKILL) {
        return OutcomeStatus::Oom;
    }
    if patterns.crash.is_match(&obs.stderr)
        || obs.signal.is_some_and(|s| patterns.fatal_signals.contains(&s))
    {
        return OutcomeStatus::Crash;
    }
    match (obs.exit_code, obs.signal) {
        (Some(0), None) => OutcomeStatus::Valid,
        _ => OutcomeStatus::Reject,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompileOutcome {
    pub status: OutcomeStatus,
    #[serde(flatten)]
    pub observation: RawObservation,
    pub wall_time_secs: f64,
    /// argv that produced this outcome, for reproduction.
    pub command: Vec<String>,
    pub language: Language,
}

impl CompileOutcome {
    pub fn stderr(&self) -> &str {
        &self.observation.stderr
    }

    pub fn exit_code(&self) -> Option<i32> {
        self.observation.exit_code
    }

    pub fn signal(&self) -> Option<i32> {
        self.observation.signal
    }
}
