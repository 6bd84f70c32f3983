//! Campaign configuration (TOML).
//!
//! Relative paths are resolved against the directory of the config file, so
//! a config and its pool/archive can be moved around together.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::CompilerConfig;
use crate::llm::{ClientMode, Endpoint, Role};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    /// Total iterations, counting those already run before a resume.
    pub iterations: u64,
    #[serde(default)]
    pub wall_clock_secs: Option<f64>,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
}

fn default_snapshot_every() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    #[serde(default)]
    pub mode: ClientMode,
    /// Response archive; required for `record` and `replay`.
    #[serde(default)]
    pub archive: Option<PathBuf>,
    /// Transport-level retries per request.
    #[serde(default = "default_retries")]
    pub transport_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Attempts beyond the first for group completion.
    #[serde(default = "default_retries")]
    pub group_retries: u32,
    /// Attempts beyond the first for instantiation.
    #[serde(default = "default_retries")]
    pub instantiate_retries: u32,
    /// Attempts beyond the first for feature extraction.
    #[serde(default = "default_retries")]
    pub extract_retries: u32,
    #[serde(default)]
    pub group: Option<Endpoint>,
    #[serde(default)]
    pub instantiate: Option<Endpoint>,
    #[serde(default)]
    pub extract: Option<Endpoint>,
    #[serde(default)]
    pub embed: Option<Endpoint>,
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    500
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig {
            mode: ClientMode::Live,
            archive: None,
            transport_retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            group_retries: default_retries(),
            instantiate_retries: default_retries(),
            extract_retries: default_retries(),
            group: None,
            instantiate: None,
            extract: None,
            embed: None,
        }
    }
}

impl ModelsConfig {
    pub fn endpoints(&self) -> HashMap<Role, Endpoint> {
        [
            (Role::Group, &self.group),
            (Role::Instantiate, &self.instantiate),
            (Role::Extract, &self.extract),
            (Role::Embed, &self.embed),
        ]
        .into_iter()
        .filter_map(|(r, e)| e.clone().map(|e| (r, e)))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Initial feature pool (JSONL).
    pub pool: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Seed-set size per iteration.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_target")]
    pub target_group_size: usize,
    /// Oldest novel features are dropped beyond this length; unbounded if unset.
    #[serde(default)]
    pub novel_queue_cap: Option<usize>,
    pub budget: Budget,
    pub compiler: CompilerConfig,
    #[serde(default)]
    pub models: ModelsConfig,
}

fn default_k() -> usize {
    2
}

fn default_target() -> usize {
    4
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_argv0(base: &Path, argv: &mut [String]) {
    if let Some(first) = argv.first_mut() {
        let p = Path::new(first.as_str());
        if p.is_relative() && first.contains('/') {
            *first = base.join(p).to_string_lossy().into_owned();
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Parse, resolve paths against the file's directory, and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.pool);
        resolve(base, &mut self.output_dir);
        if let Some(a) = self.models.archive.as_mut() {
            resolve(base, a);
        }
        let c = &mut self.compiler;
        for p in [c.coverage_path.as_mut(), c.workdir.as_mut()].into_iter().flatten() {
            resolve(base, p);
        }
        resolve_argv0(base, &mut c.command);
        for argv in [c.cpp_command.as_mut(), c.secondary_command.as_mut(), c.coverage_reporter.as_mut()]
            .into_iter()
            .flatten()
        {
            resolve_argv0(base, argv);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::Invalid("k must be at least 1".into()));
        }
        if self.target_group_size < self.k {
            return Err(ConfigError::Invalid(format!(
                "target_group_size ({}) must be at least k ({})",
                self.target_group_size, self.k
            )));
        }
        if self.budget.snapshot_every == 0 {
            return Err(ConfigError::Invalid("budget.snapshot_every must be positive".into()));
        }
        if self.budget.wall_clock_secs.is_some_and(|w| w.is_nan() || w <= 0.0) {
            return Err(ConfigError::Invalid("budget.wall_clock_secs must be positive".into()));
        }
        if self.models.mode != ClientMode::Live && self.models.archive.is_none() {
            return Err(ConfigError::Invalid("record/replay mode needs models.archive".into()));
        }
        if self.models.mode != ClientMode::Replay {
            for (name, e) in [("group", &self.models.group), ("instantiate", &self.models.instantiate)] {
                if e.is_none() {
                    return Err(ConfigError::Invalid(format!("models.{name} endpoint is required")));
                }
            }
        }
        self.compiler.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The effective configuration, defaults filled in.
    pub fn explain(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_else(|e| format!("# cannot render: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
pool = "pool.jsonl"
output_dir = "out"
seed = 7

[budget]
iterations = 10

[compiler]
command = ["./cc.sh", "{input}"]
coverage_mode = "line_report"
coverage_path = "cov.info"

[models]
mode = "replay"
archive = "archive.jsonl"
"#;

    #[test]
    fn defaults_and_resolution() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("campaign.toml");
        fs::write(&path, MINIMAL).unwrap();
        let cfg = CampaignConfig::load(&path).unwrap();
        assert_eq!((cfg.k, cfg.target_group_size), (2, 4));
        assert_eq!(cfg.budget.snapshot_every, 100);
        assert_eq!(cfg.pool, tmp.path().join("pool.jsonl"));
        assert_eq!(cfg.compiler.command[0], tmp.path().join("./cc.sh").to_string_lossy());
        assert_eq!(cfg.compiler.coverage_path, Some(tmp.path().join("cov.info")));
        assert_eq!(cfg.models.archive, Some(tmp.path().join("archive.jsonl")));
        assert!(cfg.explain().contains("target_group_size = 4"));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(CampaignConfig::from_toml(&format!("{MINIMAL}\nbogus = 1\n")).is_err());
        let mut cfg = CampaignConfig::from_toml(MINIMAL).unwrap();
        cfg.k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::from_toml(MINIMAL).unwrap();
        cfg.target_group_size = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = CampaignConfig::from_toml(MINIMAL).unwrap();
        cfg.models.mode = ClientMode::Live;
        assert!(cfg.validate().is_err());
    }
}
