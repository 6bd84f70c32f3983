use std::fs;
use std::path::Path;
use std::time::Duration;

use anyhow::Context;
use semfuzz_core::config::ModelsConfig;
use semfuzz_core::llm::{Archive, ClientMode, LlmClient, RetryPolicy};

use crate::Failure;

/// A `[models]`-shaped TOML file on its own, for commands without a
/// campaign config. Relative archive paths resolve against the file.
pub fn load_models(path: &Path) -> Result<ModelsConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::config)?;
    let mut cfg: ModelsConfig = toml::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::config)?;
    if let (Some(a), Some(base)) = (cfg.archive.as_mut(), path.parent()) {
        if a.is_relative() {
            *a = base.join(&*a);
        }
    }
    Ok(cfg)
}

pub fn client(cfg: &ModelsConfig) -> Result<LlmClient, Failure> {
    let archive = match (&cfg.archive, cfg.mode) {
        (Some(p), _) => Archive::open(p).with_context(|| format!("opening archive {}", p.display()))?,
        (None, ClientMode::Live) => Archive::in_memory(),
        (None, _) => return Err(Failure::config(anyhow::anyhow!("record/replay mode needs an archive path"))),
    };
    if cfg.mode == ClientMode::Replay && archive.is_empty() {
        log::warn!("replay archive is empty; every model call will miss");
    }
    Ok(LlmClient::new(cfg.mode, cfg.endpoints(), archive).with_retry(RetryPolicy {
        retries: cfg.transport_retries,
        backoff: Duration::from_millis(cfg.backoff_ms),
    }))
}
