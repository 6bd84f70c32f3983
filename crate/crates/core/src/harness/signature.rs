//! Crash bucketing.
//!
//! Assertion-style failures are keyed by their normalized message. Everything
//! else (segfaults, aborts without a message) is keyed by a hash of the top
//! [`TOP_FRAMES`] interesting backtrace frames, or of the last
//! [`TAIL_LINES`] stderr lines when no backtrace was printed.
//!
//! Normalization strips directories from source paths, replaces line/column
//! numbers with `N` and memory addresses with `0xADDR`, so the same failure
//! reported from a differently-laid-out build or after unrelated edits to the
//! compiler lands in the same bucket.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::outcome::{CompileOutcome, OutcomeStatus};
use crate::hashing::short_hash;

pub const TOP_FRAMES: usize = 3;
pub const TAIL_LINES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashKind {
    /// `gcc_assert`/`gcc_unreachable` ICEs, LLVM assertions and unreachables.
    AssertionFailure,
    /// Other ICE diagnostics that carry a message (tree checks, verifier failures).
    InternalError,
    /// Fatal signals; bucketed by stack trace.
    Signal,
}

impl fmt::Display for CrashKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CrashKind::AssertionFailure => "assertion",
            CrashKind::InternalError => "internal-error",
            CrashKind::Signal => "signal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CrashSignature {
    pub kind: CrashKind,
    pub key: String,
}

impl fmt::Display for CrashSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.key)
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("outcome status is {0:?}, not a crash")]
pub struct NotACrash(pub OutcomeStatus);

static ADDR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"0x[0-9A-Fa-f]+").unwrap());
static PATH: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:[A-Za-z]:)?(?:[\w.\-+~]*/)+([\w\-+~]+(?:\.[\w\-+~]+)+)").unwrap());
static LINE_COL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(\.[A-Za-z]\w*):\d+(?::\d+)?").unwrap());
static TEMP_ID: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(cc|tmp)[A-Za-z0-9]{6}\b").unwrap());

static CLANG_ASSERT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Assertion .* failed").unwrap());
static UNREACHABLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"UNREACHABLE executed").unwrap());
static ICE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"internal compiler error: ?(.*)$").unwrap());
static ICE_IN_AT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^in [^,]+, at \S+").unwrap());
static ICE_SIGNAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(Segmentation fault|Aborted|Illegal instruction|Floating point exception|Bus error|Killed signal)")
        .unwrap()
});
/// Source location at which an assertion key starts (`File.cpp:N: ...`).
static ASSERT_LOC: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\w\-+~]+\.\w+:N: .*$").unwrap());

/// LLVM (`#3 0x... fn (mod+0x..)`), gdb (`#3 0x... in fn (...) at f:1`) and
/// GCC (`0x12ab fn(args)`) frame lines.
static LLVM_FRAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*#\d+\s+0x[0-9A-Fa-f]+\s+(?:in\s+)?(.*)$").unwrap());
static GCC_FRAME: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^0x[0-9A-Fa-f]+\s+(.+)$").unwrap());
static MODULE_SUFFIX: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*\([^()]*\+0x[0-9A-Fa-f]+\)\s*$").unwrap());
static GDB_AT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+at\s+\S+$").unwrap());
static OFFSET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*\+\s*\d+$").unwrap());

/// Frames belonging to signal delivery or crash reporting, not to the bug.
const PLUMBING: &[&str] = &[
    "PrintStackTrace",
    "RunSignalHandlers",
    "SignalHandler",
    "CrashRecoveryContext",
    "__restore_rt",
    "crash_signal",
    "internal_error",
    "fancy_abort",
    "diagnostic_",
    "__pthread_kill",
    "pthread_kill",
    "gsignal",
    "raise",
    "abort",
    "_sigtramp",
];

/// Normalize one line of diagnostic text for bucketing.
pub fn normalize_line(line: &str) -> String {
    let s = ADDR.replace_all(line.trim(), "0xADDR");
    let s = PATH.replace_all(&s, "$1");
    let s = LINE_COL.replace_all(&s, "$1:N");
    let s = TEMP_ID.replace_all(&s, "$1XXXXXX");
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn assertion_key(line: &str) -> String {
    let n = normalize_line(line);
    match ASSERT_LOC.find(&n) {
        Some(m) => m.as_str().to_string(),
        None => n,
    }
}

fn frame_name(line: &str) -> Option<String> {
    let c = LLVM_FRAME
        .captures(line)
        .or_else(|| GCC_FRAME.captures(line.trim_end()))?;
    let raw = c[1].to_string();
    let s = MODULE_SUFFIX.replace(&raw, "");
    let s = GDB_AT.replace(&s, "");
    let s = OFFSET.replace(&s, "");
    let s = normalize_line(&s);
    if s.is_empty() || s == "??" || s.starts_with('(') || s.starts_with("0xADDR") {
        return None;
    }
    if PLUMBING.iter().any(|p| s.contains(p)) {
        return None;
    }
    Some(s)
}

/// Frames usable for bucketing, top first.
pub fn interesting_frames(stderr: &str) -> Vec<String> {
    stderr.lines().filter_map(frame_name).collect()
}

fn is_noise(line: &str) -> bool {
    let t = line.trim();
    t.is_empty()
        || t.starts_with("Stack dump:")
        || t.contains("Program arguments:")
        || t.starts_with("PLEASE ")
        || t.starts_with("Please submit")
        || t.starts_with("See <")
        || t.starts_with("Preprocessed source")
        || t.starts_with("clang: note:")
        || t.starts_with("Target:")
        || t.starts_with("Thread model:")
        || t.starts_with("InstalledDir:")
        || t.starts_with("Build config:")
        || t.contains("version ")
}

/// Bucket a crash from its stderr alone (plus the terminating signal, if any).
pub fn signature_from_stderr(stderr: &str, signal: Option<i32>) -> CrashSignature {
    for line in stderr.lines() {
        if CLANG_ASSERT.is_match(line) || UNREACHABLE.is_match(line) {
            return CrashSignature {
                kind: CrashKind::AssertionFailure,
                key: assertion_key(line),
            };
        }
    }
    for line in stderr.lines() {
        if let Some(c) = ICE.captures(line) {
            let msg = c[1].trim();
            if ICE_SIGNAL.is_match(msg) {
                break;
            }
            let key = normalize_line(&format!("internal compiler error: {msg}"));
            let kind = if ICE_IN_AT.is_match(msg) {
                CrashKind::AssertionFailure
            } else {
                CrashKind::InternalError
            };
            return CrashSignature { kind, key };
        }
    }

    let frames = interesting_frames(stderr);
    let key = if !frames.is_empty() {
        let top: Vec<_> = frames.into_iter().take(TOP_FRAMES).collect();
        format!("trace-{}", short_hash(top.join("\n").as_bytes(), 16))
    } else {
        let lines: Vec<String> = stderr
            .lines()
            .filter(|l| !is_noise(l))
            .map(normalize_line)
            .collect();
        let tail = &lines[lines.len().saturating_sub(TAIL_LINES)..];
        let mut material = tail.join("\n");
        if let Some(sig) = signal {
            material.push_str(&format!("\nsignal {sig}"));
        }
        format!("tail-{}", short_hash(material.as_bytes(), 16))
    };
    CrashSignature {
        kind: CrashKind::Signal,
        key,
    }
}

pub fn classify_crash(o: &CompileOutcome) -> Result<CrashSignature, NotACrash> {
    if o.status != OutcomeStatus::Crash {
        return Err(NotACrash(o.status));
    }
    Ok(signature_from_stderr(o.stderr(), o.signal()))
}
