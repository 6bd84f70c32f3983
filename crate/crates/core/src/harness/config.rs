use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;

/// SIGSEGV, SIGABRT, SIGILL, SIGFPE, SIGBUS.
pub const DEFAULT_FATAL_SIGNALS: [i32; 5] = [
    libc::SIGSEGV,
    libc::SIGABRT,
    libc::SIGILL,
    libc::SIGFPE,
    libc::SIGBUS,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    /// Byte-per-edge bitmap written by the instrumented compiler.
    EdgeBitmap,
    /// Executed `file:line` pairs from a line-coverage reporter.
    LineReport,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompilerConfig {
    /// argv template. `{input}` and `{output}` are substituted; `{flags}`
    /// expands to the flag list (otherwise flags follow argv[0]).
    pub command: Vec<String>,
    /// Driver used for programs detected as C++.
    #[serde(default)]
    pub cpp_command: Option<Vec<String>>,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default)]
    pub memory_limit_bytes: Option<u64>,
    #[serde(default)]
    pub coverage_mode: CoverageMode,
    /// Bitmap or report file the instrumented compiler writes. Exported to
    /// the compiler as `SEMFUZZ_COVERAGE_OUT`.
    #[serde(default)]
    pub coverage_path: Option<PathBuf>,
    /// Command printing a line-coverage report on stdout (e.g. a gcov
    /// wrapper). Takes precedence over `coverage_path` in line mode.
    #[serde(default)]
    pub coverage_reporter: Option<Vec<String>>,
    /// Working directory for the compiler; defaults to the iteration directory.
    #[serde(default)]
    pub workdir: Option<PathBuf>,
    #[serde(default = "default_stderr_cap")]
    pub stderr_cap_bytes: usize,
    #[serde(default = "default_crash_patterns")]
    pub crash_patterns: Vec<String>,
    #[serde(default = "default_oom_patterns")]
    pub oom_patterns: Vec<String>,
    #[serde(default = "default_fatal_signals")]
    pub fatal_signals: Vec<i32>,
    /// Diagnostics that mean the wrong language frontend was used.
    #[serde(default = "default_language_mismatch")]
    pub language_mismatch_patterns: Vec<String>,
    /// Reference compiler used to decide whether a crashing program is
    /// itself valid. Off when unset.
    #[serde(default)]
    pub secondary_command: Option<Vec<String>>,
    /// Path prefix -> compiler component, for per-component coverage.
    #[serde(default)]
    pub components: BTreeMap<String, String>,
}

fn default_timeout() -> f64 {
    10.0
}

fn default_stderr_cap() -> usize {
    64 * 1024
}

pub(crate) fn default_crash_patterns() -> Vec<String> {
    [
        "internal compiler error",
        "Assertion .* failed",
        "UNREACHABLE executed",
        "PLEASE submit a bug report",
    ]
    .map(String::from)
    .to_vec()
}

pub(crate) fn default_oom_patterns() -> Vec<String> {
    [
        "virtual memory exhausted",
        "out of memory",
        "std::bad_alloc",
        "Cannot allocate memory",
    ]
    .map(String::from)
    .to_vec()
}

fn default_fatal_signals() -> Vec<i32> {
    DEFAULT_FATAL_SIGNALS.to_vec()
}

fn default_language_mismatch() -> Vec<String> {
    [
        r"unknown type name '(class|namespace|template|typename)'",
        r"'(class|namespace|template)' undeclared",
        r"expected .* before '<' token",
        r"invalid conversion from 'void\*'",
        r"ISO C\+\+ forbids",
    ]
    .map(String::from)
    .to_vec()
}

impl CompilerConfig {
    pub fn new(command: Vec<String>) -> Self {
        CompilerConfig {
            command,
            cpp_command: None,
            flags: Vec::new(),
            timeout_secs: default_timeout(),
            memory_limit_bytes: None,
            coverage_mode: CoverageMode::None,
            coverage_path: None,
            coverage_reporter: None,
            workdir: None,
            stderr_cap_bytes: default_stderr_cap(),
            crash_patterns: default_crash_patterns(),
            oom_patterns: default_oom_patterns(),
            fatal_signals: default_fatal_signals(),
            language_mismatch_patterns: default_language_mismatch(),
            secondary_command: None,
            components: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err(HarnessError::Config("timeout_secs must be positive".into()));
        }
        for (name, cmd) in [("command", Some(&self.command)), ("cpp_command", self.cpp_command.as_ref())] {
            let Some(cmd) = cmd else { continue };
            if cmd.is_empty() {
                return Err(HarnessError::Config(format!("{name} is empty")));
            }
            if !cmd.iter().any(|a| a.contains("{input}")) {
                return Err(HarnessError::Config(format!("{name} lacks an {{input}} placeholder")));
            }
        }
        if self.coverage_mode == CoverageMode::EdgeBitmap && self.coverage_path.is_none() {
            return Err(HarnessError::Config("edge_bitmap coverage needs coverage_path".into()));
        }
        if self.coverage_mode == CoverageMode::LineReport
            && self.coverage_path.is_none()
            && self.coverage_reporter.is_none()
        {
            return Err(HarnessError::Config(
                "line_report coverage needs coverage_path or coverage_reporter".into(),
            ));
        }
        for p in self
            .crash_patterns
            .iter()
            .chain(&self.oom_patterns)
            .chain(&self.language_mismatch_patterns)
        {
            regex::Regex::new(p).map_err(|e| HarnessError::Config(format!("bad pattern {p:?}: {e}")))?;
        }
        Ok(())
    }

    /// Expand an argv template for one input/output pair.
    pub fn expand(&self, template: &[String], input: &str, output: &str) -> Vec<String> {
        let has_flags = template.iter().any(|a| a == "{flags}");
        let mut argv = Vec::with_capacity(template.len() + self.flags.len());
        for (i, arg) in template.iter().enumerate() {
            if arg == "{flags}" {
                argv.extend(self.flags.iter().cloned());
                continue;
            }
            argv.push(arg.replace("{input}", input).replace("{output}", output));
            if i == 0 && !has_flags {
                argv.extend(self.flags.iter().cloned());
            }
        }
        argv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn expand_with_and_without_flags_placeholder() {
        let mut cfg = CompilerConfig::new(s(&["gcc", "-c", "{input}", "-o", "{output}"]));
        cfg.flags = s(&["-O2", "-w"]);
        assert_eq!(
            cfg.expand(&cfg.command, "a.c", "a.o"),
            s(&["gcc", "-O2", "-w", "-c", "a.c", "-o", "a.o"])
        );
        let t = s(&["cc", "{input}", "{flags}"]);
        assert_eq!(cfg.expand(&t, "a.c", "a.o"), s(&["cc", "a.c", "-O2", "-w"]));
    }

    #[test]
    fn validation() {
        let mut cfg = CompilerConfig::new(s(&["gcc", "{input}"]));
        assert!(cfg.validate().is_ok());
        cfg.timeout_secs = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = CompilerConfig::new(s(&["gcc"]));
        assert!(cfg.validate().is_err());
        let mut cfg = CompilerConfig::new(s(&["gcc", "{input}"]));
        cfg.coverage_mode = CoverageMode::EdgeBitmap;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = toml::from_str::<CompilerConfig>("command = [\"cc\", \"{input}\"]\ntimeout = 3\n");
        assert!(err.is_err());
    }
}
