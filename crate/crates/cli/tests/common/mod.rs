//! Shared setup for the CLI-level tests: a loopback model server whose
//! replies depend only on the prompt, a small feature pool, and campaign
//! configs around the fake compiler in `fixtures/fakecc.sh`.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semfuzz_core::feature::{Feature, FeaturePool, Origin};
use semfuzz_core::llm::stub::{chat_body, StubServer};
use serde_json::Value;

pub const CRASH_MARKER: &str = "ICE_TRIGGER";

pub fn semfuzz() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_semfuzz"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn semfuzz")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fake_compiler() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fakecc.sh")
}

fn fnv(text: &str, salt: u64) -> u64 {
    text.bytes()
        .fold(0xcbf29ce484222325 ^ salt, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

fn numbered(text: &str) -> Vec<&str> {
    text.lines()
        .filter_map(|l| {
            let (n, rest) = l.split_once(". ")?;
            n.chars().all(|c| c.is_ascii_digit()).then_some(rest)
        })
        .collect()
}

const VERBS: [&str; 6] = ["nest", "alias", "shadow", "reorder", "overflow", "truncate"];
const OBJECTS: [&str; 6] = [
    "a bitfield",
    "a union member",
    "a loop counter",
    "a function pointer",
    "a compound literal",
    "a static array",
];

/// Group completions draw from a small vocabulary so glue features recur.
fn glue_reply(system: &str, prompt: &str) -> String {
    let missing: usize = system
        .split("up to ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|n| n.parse().ok())
        .unwrap_or(2);
    let have = numbered(prompt).len();
    (0..missing)
        .map(|i| {
            let h = fnv(prompt, i as u64);
            format!(
                "{}. The code should {} {}.",
                have + i + 1,
                VERBS[(h % 6) as usize],
                OBJECTS[((h / 6) % 6) as usize]
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// A program with one commented block per listed feature.
fn program_reply(prompt: &str) -> String {
    let mut code = String::from("```c\n#include <stddef.h>\nint main(void) {\n");
    let features = prompt.split("[Instructions]").next().unwrap_or(prompt);
    for (i, d) in numbered(features).iter().enumerate() {
        code.push_str(&format!("    /* {d} */\n    int v{i} = {};\n", d.len()));
    }
    code.push_str("    return 0;\n}\n```\n");
    code
}

/// Features for the bugs in `fixtures/bugs`, keyed by a word of the report.
fn extract_reply(prompt: &str) -> String {
    if prompt.contains("flexible array") {
        "1. The code should declare a struct with a flexible array member.\n\
         2. The code should pass a struct by value."
    } else if prompt.contains("goto") {
        "1. The code should jump backwards with goto.\n\
         2. The code should declare a VLA inside the loop body (lines 3-3)."
    } else if prompt.contains("bitfield") {
        "1. The code should use a volatile bitfield.\n\
         2. The code should pass a struct by value."
    } else {
        "Nothing to extract."
    }
    .to_string()
}

pub fn model_reply(body: &str) -> String {
    let v: Value = serde_json::from_str(body).expect("json request");
    let msgs = v["messages"].as_array().expect("messages");
    let content = |role: &str| {
        msgs.iter()
            .find(|m| m["role"] == role)
            .and_then(|m| m["content"].as_str())
            .map(str::to_string)
    };
    let user = content("user").unwrap_or_default();
    match content("system") {
        Some(system) => glue_reply(&system, &user),
        None if user.contains("bug report:") => extract_reply(&user),
        None => program_reply(&user),
    }
}

pub fn stub_models() -> StubServer {
    StubServer::spawn(|_, body| (200, chat_body(&model_reply(body))))
}

pub fn seed_pool() -> FeaturePool {
    let descs = [
        "The code should declare a struct with a flexible array member.",
        "The code should pass a struct by value to a variadic function.",
        "The code should jump backwards with goto across a declaration.",
        "The code should use a volatile-qualified bitfield.",
        "The code should shift a signed value by its width minus one.",
        "The code should compute a pointer difference across a cast.",
        "The code should call a nested function through a pointer.",
        "The code should mix _Complex and integer arithmetic.",
        "The code should define a recursive inline function.",
        "The code should index an array with a negative constant.",
        "The code should use a statement expression as a loop bound.",
        "The code should expand the ICE_TRIGGER macro inside a switch.",
    ];
    let mut pool = FeaturePool::new();
    for d in descs {
        pool.insert(Feature::new(d, "", Origin::Manual).unwrap()).unwrap();
    }
    pool
}

pub struct CampaignSpec<'a> {
    pub mode: &'a str,
    pub base_url: &'a str,
    pub iterations: u64,
    pub output_dir: &'a str,
    pub snapshot_every: u64,
    pub compiler: PathBuf,
}

impl<'a> CampaignSpec<'a> {
    pub fn new(mode: &'a str, base_url: &'a str, iterations: u64, output_dir: &'a str) -> Self {
        CampaignSpec {
            mode,
            base_url,
            iterations,
            output_dir,
            snapshot_every: 10,
            compiler: fake_compiler(),
        }
    }

    /// Write `<dir>/<name>` referencing `pool.jsonl` and `archive.jsonl` in `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> PathBuf {
        let text = format!(
            r#"pool = "pool.jsonl"
output_dir = "{out}"
seed = 2024
k = 2
target_group_size = 4

[budget]
iterations = {iters}
snapshot_every = {snap}

[compiler]
command = ["{cc}", "{{input}}"]
coverage_mode = "line_report"
coverage_path = "{out}.cov.info"
timeout_secs = 10

[models]
mode = "{mode}"
archive = "archive.jsonl"
backoff_ms = 1

[models.group]
base_url = "{url}"
model = "stub-group"

[models.instantiate]
base_url = "{url}"
model = "stub-instantiate"
"#,
            out = self.output_dir,
            iters = self.iterations,
            snap = self.snapshot_every,
            cc = self.compiler.display(),
            mode = self.mode,
            url = self.base_url,
        );
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }
}

/// A directory holding the seed pool.
pub fn campaign_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    seed_pool().save(&dir.path().join("pool.jsonl")).unwrap();
    dir
}

pub fn fuzz(config: &Path, resume: bool) -> Output {
    let mut cmd = semfuzz();
    cmd.arg("fuzz").arg("--config").arg(config);
    if resume {
        cmd.arg("--resume");
    }
    run(&mut cmd)
}

pub fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}
