use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use semfuzz_core::extraction::{
    add_groups_to_pool, extract_batch, ArtifactSource, BugzillaSource, FixtureSource,
};
use semfuzz_core::llm::Role;
use semfuzz_core::synthesis::{collected_groups, export_training_dataset};
use semfuzz_core::{FeatureGroup, FeaturePool};
use serde_json::json;

use crate::{models, CmdResult, Failure};

#[derive(Args)]
pub struct ExtractArgs {
    /// Fixture directory: one subdirectory per bug.
    #[arg(long, conflicts_with = "tracker", required_unless_present = "tracker")]
    pub fixtures: Option<PathBuf>,
    /// Bugzilla root URL.
    #[arg(long)]
    pub tracker: Option<String>,
    /// Search terms for the tracker, e.g. `product=gcc&keywords=ice-on-valid-code`.
    #[arg(long, default_value = "")]
    pub query: String,
    #[arg(long, default_value_t = 100)]
    pub limit: usize,
    /// Model configuration (the `[models]` table of a campaign config).
    #[arg(long)]
    pub models: PathBuf,
    /// Pool to create or extend.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the collected groups as JSON lines.
    #[arg(long)]
    pub groups_out: Option<PathBuf>,
}

pub fn write_groups(path: &Path, groups: &[FeatureGroup]) -> anyhow::Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for g in groups {
        serde_json::to_writer(&mut w, g)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_groups(path: &Path) -> anyhow::Result<Vec<FeatureGroup>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

pub fn extract(a: ExtractArgs) -> CmdResult {
    let mcfg = models::load_models(&a.models)?;
    let client = models::client(&mcfg)?;
    let fetched = match (&a.fixtures, &a.tracker) {
        (Some(dir), _) => FixtureSource::new(dir).fetch(a.limit)?,
        (None, Some(url)) => BugzillaSource::new(url.clone(), a.query.clone()).fetch(a.limit)?,
        (None, None) => return Err(Failure::config(anyhow::anyhow!("give --fixtures or --tracker"))),
    };
    let (groups, stats) = extract_batch(&fetched.artifacts, &client, &client.params(Role::Extract), mcfg.extract_retries);

    let mut pool = if a.out.exists() {
        FeaturePool::load(&a.out).with_context(|| format!("loading {}", a.out.display()))?
    } else {
        FeaturePool::new()
    };
    let added = add_groups_to_pool(&mut pool, &groups);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    pool.save(&a.out)?;
    if let Some(path) = &a.groups_out {
        write_groups(path, &groups)?;
    }
    let summary = json!({
        "bugs": fetched.artifacts.len(),
        "skipped_records": fetched.parse_errors.len(),
        "groups": stats.groups,
        "features": stats.features,
        "new_features": added,
        "pool_size": pool.len(),
        "model_failures": stats.model_failures,
        "empty_responses": stats.empty_responses,
    });
    println!("{summary}");
    Ok(())
}

#[derive(Args)]
pub struct TraindataArgs {
    /// Pool whose extracted features are regrouped by bug.
    #[arg(long, conflicts_with = "groups", required_unless_present = "groups")]
    pub pool: Option<PathBuf>,
    /// Groups file (JSON lines) as written by `extract --groups-out`.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn traindata(a: TraindataArgs) -> CmdResult {
    let groups = match (&a.pool, &a.groups) {
        (Some(p), _) => collected_groups(&FeaturePool::load(p).with_context(|| format!("loading {}", p.display()))?),
        (None, Some(g)) => read_groups(g)?,
        (None, None) => return Err(Failure::config(anyhow::anyhow!("give --pool or --groups"))),
    };
    let stats = export_training_dataset(&groups, &a.out, a.seed)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}
