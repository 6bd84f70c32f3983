use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use semfuzz_core::campaign::runs_dir;
use semfuzz_core::harness::{CrashKind, OutcomeRecord, OUTCOME_FILE};
use serde::Serialize;

use crate::CmdResult;

const SAMPLE_LINES: usize = 20;

#[derive(Args)]
pub struct TriageArgs {
    /// Campaign output directory.
    pub campaign_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub kind: CrashKind,
    pub key: String,
    pub first_iteration: u64,
    pub count: u64,
    /// Command line that reproduces the first occurrence.
    pub command: Vec<String>,
    pub sample_stderr: String,
}

/// Group crash records by signature, sorted by kind then key.
pub fn bucket(records: &[OutcomeRecord]) -> Vec<Bucket> {
    let mut map: BTreeMap<(CrashKind, String), Bucket> = BTreeMap::new();
    for r in records {
        let Some(sig) = &r.signature else { continue };
        let b = map.entry((sig.kind, sig.key.clone())).or_insert_with(|| Bucket {
            kind: sig.kind,
            key: sig.key.clone(),
            first_iteration: r.iteration,
            count: 0,
            command: r.outcome.command.clone(),
            sample_stderr: r.outcome.stderr().lines().take(SAMPLE_LINES).collect::<Vec<_>>().join("\n"),
        });
        b.count += 1;
        if r.iteration < b.first_iteration {
            b.first_iteration = r.iteration;
            b.command = r.outcome.command.clone();
            b.sample_stderr = r.outcome.stderr().lines().take(SAMPLE_LINES).collect::<Vec<_>>().join("\n");
        }
    }
    map.into_values().collect()
}

pub fn load_records(dir: &Path) -> anyhow::Result<Vec<OutcomeRecord>> {
    let runs = runs_dir(dir);
    let mut out = Vec::new();
    if !runs.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(&runs).with_context(|| format!("listing {}", runs.display()))? {
        let path = entry?.path().join(OUTCOME_FILE);
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path)?;
        out.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    out.sort_by_key(|r: &OutcomeRecord| r.iteration);
    Ok(out)
}

pub fn run(a: TriageArgs) -> CmdResult {
    let buckets = bucket(&load_records(&a.campaign_dir)?);
    let out = a.campaign_dir.join("triage.json");
    fs::write(&out, serde_json::to_vec_pretty(&buckets)?)?;
    if buckets.is_empty() {
        println!("no crashes");
    } else {
        println!("{:<18} {:<40} {:>6} {:>6}", "kind", "key", "first", "count");
        for b in &buckets {
            println!("{:<18} {:<40} {:>6} {:>6}", b.kind.to_string(), b.key, b.first_iteration, b.count);
        }
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use semfuzz_core::harness::{signature_from_stderr, CompileOutcome, OutcomeStatus, RawObservation};
    use semfuzz_core::instantiation::Language;

    fn rec(iteration: u64, stderr: &str) -> OutcomeRecord {
        OutcomeRecord {
            iteration,
            group_id: "g".into(),
            outcome: CompileOutcome {
                status: OutcomeStatus::Crash,
                observation: RawObservation {
                    exit_code: Some(4),
                    stderr: stderr.into(),
                    ..RawObservation::default()
                },
                wall_time_secs: 0.1,
                command: vec!["cc".into(), format!("{iteration}/input.c")],
                language: Language::C,
            },
            signature: Some(signature_from_stderr(stderr, None)),
            crash_counted_valid: false,
        }
    }

    #[test]
    fn duplicates_share_a_bucket() {
        let a = "t.c:3:1: internal compiler error: in fold_binary, at fold-const.cc:100";
        let b = "u.c:9:5: internal compiler error: in fold_binary, at fold-const.cc:100";
        let buckets = bucket(&[rec(4, a), rec(2, b)]);
        assert_eq!(buckets.len(), 1);
        assert_eq!(buckets[0].count, 2);
        assert_eq!(buckets[0].first_iteration, 2);
        assert_eq!(buckets[0].command[1], "2/input.c");
    }

    #[test]
    fn sorted_by_kind_then_key() {
        let records = [
            rec(0, "x.c:1:1: internal compiler error: Segmentation fault"),
            rec(1, "x.c:1:1: internal compiler error: in b_fn, at b.cc:1"),
            rec(2, "x.c:1:1: internal compiler error: in a_fn, at a.cc:1"),
            rec(3, "x.c:1:1: internal compiler error: tree check: expected tree_list"),
        ];
        let buckets = bucket(&records);
        let order: Vec<(CrashKind, &str)> = buckets.iter().map(|b| (b.kind, b.key.as_str())).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        assert!(bucket(&[]).is_empty());
    }
}
