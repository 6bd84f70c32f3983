//! Bucketing of a hand-labeled corpus of compiler crash logs.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use semfuzz_core::harness::{signature_from_stderr, CrashSignature};

struct Sample {
    file: String,
    label: String,
    kind: String,
    signal: Option<i32>,
    stderr: String,
}

fn corpus() -> Vec<Sample> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/crashes");
    let labels = fs::read_to_string(dir.join("labels.tsv")).unwrap();
    labels
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            assert_eq!(cols.len(), 4, "bad label line {l:?}");
            Sample {
                file: cols[0].to_string(),
                label: cols[1].to_string(),
                kind: cols[2].to_string(),
                signal: cols[3].parse().ok(),
                stderr: fs::read_to_string(dir.join(cols[0])).unwrap(),
            }
        })
        .collect()
}

fn classify(s: &Sample) -> CrashSignature {
    signature_from_stderr(&s.stderr, s.signal)
}

#[test]
fn corpus_is_large_enough() {
    let c = corpus();
    assert!(c.len() >= 12);
    let labels: std::collections::BTreeSet<_> = c.iter().map(|s| &s.label).collect();
    assert!(labels.len() >= 8);
}

#[test]
fn partition_matches_labels() {
    let c = corpus();
    let sigs: Vec<CrashSignature> = c.iter().map(classify).collect();
    let mut by_label: BTreeMap<&str, &CrashSignature> = BTreeMap::new();
    let mut by_sig: BTreeMap<&CrashSignature, &str> = BTreeMap::new();
    for (s, sig) in c.iter().zip(&sigs) {
        if let Some(prev) = by_label.insert(&s.label, sig) {
            assert_eq!(prev, sig, "{} split from its bucket {}", s.file, s.label);
        }
        if let Some(prev) = by_sig.insert(sig, &s.label) {
            assert_eq!(prev, s.label, "{} merged into {prev} as {sig}", s.file);
        }
        assert_eq!(sig.kind.to_string(), s.kind, "{}", s.file);
    }
}

#[test]
fn classification_is_repeatable() {
    let c = corpus();
    let first: Vec<_> = c.iter().map(classify).collect();
    for _ in 0..3 {
        assert_eq!(first, c.iter().map(classify).collect::<Vec<_>>());
    }
}

