mod common;

use std::fs;
use std::path::Path;

use common::{assert_ok, campaign_dir, fixture, fuzz, run, semfuzz, stub_models, CampaignSpec};
use semfuzz_core::FeaturePool;
use serde_json::Value;

fn json_line(stdout: &[u8]) -> Value {
    let text = String::from_utf8_lossy(stdout);
    serde_json::from_str(text.lines().last().expect("output")).expect("json output")
}

fn models_toml(dir: &Path, mode: &str, url: &str) -> std::path::PathBuf {
    let path = dir.join(format!("models-{mode}.toml"));
    fs::write(
        &path,
        format!(
            "mode = \"{mode}\"\narchive = \"extract-archive.jsonl\"\nbackoff_ms = 1\n\n\
             [extract]\nbase_url = \"{url}\"\nmodel = \"stub-extract\"\n"
        ),
    )
    .unwrap();
    path
}

fn extract(models: &Path, out: &Path, groups: &Path) -> std::process::Output {
    run(semfuzz()
        .arg("extract")
        .arg("--fixtures")
        .arg(fixture("bugs"))
        .arg("--models")
        .arg(models)
        .arg("--out")
        .arg(out)
        .arg("--groups-out")
        .arg(groups))
}

#[test]
fn extract_then_replay_then_traindata() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (pool, groups) = (d.join("pool.jsonl"), d.join("groups.jsonl"));
    {
        let server = stub_models();
        let out = extract(&models_toml(d, "record", &server.base_url()), &pool, &groups);
        assert_ok(&out);
        let s = json_line(&out.stdout);
        assert_eq!(s["bugs"], 3);
        assert_eq!(s["skipped_records"], 1);
        assert_eq!(s["groups"], 3);
        assert_eq!(s["features"], 6);
        // "pass a struct by value" is shared by two bugs.
        assert_eq!(s["new_features"], 5);
    }
    let recorded = FeaturePool::load(&pool).unwrap();
    let goto = recorded.iter().find(|f| f.description.contains("VLA")).unwrap();
    assert_eq!(goto.witness, "  int v[n];");

    // Offline replay reproduces the same pool.
    let (pool2, groups2) = (d.join("pool2.jsonl"), d.join("groups2.jsonl"));
    assert_ok(&extract(&models_toml(d, "replay", "http://127.0.0.1:9/v1"), &pool2, &groups2));
    assert_eq!(FeaturePool::load(&pool2).unwrap(), recorded);
    assert_eq!(fs::read_to_string(&groups).unwrap(), fs::read_to_string(&groups2).unwrap());

    let pairs = d.join("pairs.jsonl");
    let out = run(semfuzz().args(["traindata", "--seed", "5", "--pool"]).arg(&pool).arg("--out").arg(&pairs));
    assert_ok(&out);
    // The pool keeps a shared feature under the bug that contributed it
    // first, which leaves bug 103 with a single feature.
    let s = json_line(&out.stdout);
    assert_eq!((s["pairs_out"].as_u64(), s["groups_skipped"].as_u64()), (Some(8), Some(1)));
    assert_eq!(fs::read_to_string(&pairs).unwrap().lines().count(), 8);

    let pairs2 = d.join("pairs2.jsonl");
    let out = run(semfuzz().args(["traindata", "--seed", "5", "--groups"]).arg(&groups).arg("--out").arg(&pairs2));
    assert_ok(&out);
    assert_eq!(json_line(&out.stdout)["pairs_out"], 12);

    let out = run(semfuzz().args(["metrics", "coherence", "--groups"]).arg(&groups));
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3);
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["size"], 2);
        assert!(v["diameter"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn jaccard_from_counts_and_files() {
    let out = run(semfuzz().args(["metrics", "jaccard", "--counts", "420455,31663,13442"]));
    assert_ok(&out);
    let v = json_line(&out.stdout);
    assert_eq!(v["union"], 465_560);
    assert!((v["percent"].as_f64().unwrap() - 90.31).abs() < 0.005);

    let out = run(semfuzz().args(["metrics", "jaccard", "--counts", "1,2"]));
    assert_eq!(out.status.code(), Some(2));

    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.txt"), tmp.path().join("b.txt"));
    fs::write(&a, "# unit_kind=line\nx.c:1\nx.c:2\nx.c:3\n").unwrap();
    fs::write(&b, "# unit_kind=line\nx.c:2\nx.c:3\nx.c:4\n").unwrap();
    let out = run(semfuzz().args(["metrics", "jaccard"]).arg(&a).arg(&b));
    assert_ok(&out);
    let v = json_line(&out.stdout);
    assert_eq!((v["overlap"].as_u64(), v["union"].as_u64()), (Some(2), Some(4)));
}

#[test]
fn fuzz_triage_and_validity() {
    let dir = campaign_dir();
    let d = dir.path();
    let server = stub_models();
    let url = server.base_url();
    let cfg = CampaignSpec::new("live", &url, 50, "out").write(d, "c.toml");
    let out = fuzz(&cfg, false);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).trim().ends_with("report.json"));

    let out = run(semfuzz().arg("triage").arg(d.join("out")));
    assert_ok(&out);
    let buckets: Value = serde_json::from_str(&fs::read_to_string(d.join("out/triage.json")).unwrap()).unwrap();
    let buckets = buckets.as_array().unwrap();
    assert_eq!(buckets.len(), 1, "the fake compiler has one crash site");
    assert_eq!(buckets[0]["kind"], "assertion_failure");
    assert!(buckets[0]["sample_stderr"].as_str().unwrap().contains("internal compiler error"));

    let out = run(semfuzz().args(["metrics", "validity"]).arg(d.join("out")));
    assert_ok(&out);
    let v = json_line(&out.stdout);
    assert!(v["generated"].as_u64().unwrap() > 0);

    // A finished campaign is not silently overwritten.
    assert_eq!(fuzz(&cfg, false).status.code(), Some(2));
}

#[test]
fn fuzz_exit_codes() {
    let dir = campaign_dir();
    let d = dir.path();
    let url = "http://127.0.0.1:9/v1";

    let bad = d.join("bad.toml");
    fs::write(&bad, "pool = \"pool.jsonl\"\nbogus = 1\n").unwrap();
    assert_eq!(fuzz(&bad, false).status.code(), Some(2));
    assert_eq!(fuzz(&d.join("missing.toml"), false).status.code(), Some(2));

    let mut spec = CampaignSpec::new("live", url, 5, "nocc");
    spec.compiler = d.join("no-such-compiler");
    let out = fuzz(&spec.write(d, "nocc.toml"), false);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = CampaignSpec::new("live", url, 0, "zero").write(d, "zero.toml");
    let out = fuzz(&cfg, false);
    assert_ok(&out);
    let report: Value = serde_json::from_str(&fs::read_to_string(d.join("zero/report.json")).unwrap()).unwrap();
    assert_eq!(report["iterations"], 0);

    let out = run(semfuzz().args(["fuzz", "--explain-config", "--config"]).arg(&cfg));
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("snapshot_every = 10") && text.contains("stderr_cap_bytes"));
}
