//! Mining features from historical compiler bugs.
//!
//! A bug artifact (report, reproducer, fix notes) is rendered into the
//! extraction prompt; the model answers with a list of "The code should ..."
//! items which become one collected [`FeatureGroup`] per bug.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::feature::{Feature, FeatureGroup, FeaturePool, GroupSource, Origin};
use crate::instantiation::{detect_language, Language};
use crate::listparse::{parse_items, repair_stem};
use crate::llm::{ChatModel, ModelError, ModelParams, ModelRequest, Role};
use crate::template::fill;

const TEMPLATE: &str = include_str!("../prompts/extraction.txt");

pub const NOT_AVAILABLE: &str = "(not available)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugArtifact {
    pub bug_id: String,
    pub report_text: String,
    pub poc_source: String,
    pub fix_summary: String,
    pub url: String,
    /// No fix history was available; features come from report and PoC only.
    pub partial: bool,
}

impl BugArtifact {
    pub fn new(
        bug_id: impl Into<String>,
        report_text: impl Into<String>,
        poc_source: impl Into<String>,
        fix_summary: impl Into<String>,
        url: impl Into<String>,
    ) -> Result<Self, ExtractionError> {
        let bug_id = bug_id.into();
        let report_text = report_text.into();
        let poc_source = poc_source.into();
        let fix_summary = fix_summary.into();
        if bug_id.trim().is_empty() {
            return Err(ExtractionError::Parse("empty bug id".into()));
        }
        if report_text.trim().is_empty() && poc_source.trim().is_empty() {
            return Err(ExtractionError::Parse(format!("bug {bug_id}: neither report nor program")));
        }
        Ok(BugArtifact {
            partial: fix_summary.trim().is_empty(),
            bug_id,
            report_text,
            poc_source,
            fix_summary,
            url: url.into(),
        })
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed record: {0}")]
    Parse(String),
    #[error("no features found in response for bug {0}")]
    NoFeaturesFound(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Artifacts plus the malformed records that were skipped.
#[derive(Debug, Default)]
pub struct FetchResult {
    pub artifacts: Vec<BugArtifact>,
    pub parse_errors: Vec<String>,
}

pub trait ArtifactSource {
    fn fetch(&self, limit: usize) -> Result<FetchResult, ExtractionError>;
}

/// One subdirectory per bug holding `report.txt`, `poc.c` (or `.cpp`/`.cc`),
/// optionally `fix.txt` and `url.txt`. Directories are visited in name order.
#[derive(Debug, Clone)]
pub struct FixtureSource {
    pub dir: PathBuf,
}

const POC_NAMES: [&str; 3] = ["poc.c", "poc.cpp", "poc.cc"];

fn read_optional(path: &Path) -> Result<String, ExtractionError> {
    match fs::read(path) {
        Ok(bytes) => String::from_utf8(bytes)
            .map_err(|_| ExtractionError::Parse(format!("{}: not UTF-8", path.display()))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(String::new()),
        Err(e) => Err(e.into()),
    }
}

impl FixtureSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureSource { dir: dir.into() }
    }

    fn read_one(dir: &Path) -> Result<BugArtifact, ExtractionError> {
        let bug_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let report = read_optional(&dir.join("report.txt"))?;
        let mut poc = String::new();
        for name in POC_NAMES {
            poc = read_optional(&dir.join(name))?;
            if !poc.is_empty() {
                break;
            }
        }
        let fix = read_optional(&dir.join("fix.txt"))?;
        let url = read_optional(&dir.join("url.txt"))?.trim().to_string();
        BugArtifact::new(bug_id, report, poc, fix, url)
    }
}

impl ArtifactSource for FixtureSource {
    fn fetch(&self, limit: usize) -> Result<FetchResult, ExtractionError> {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        let mut out = FetchResult::default();
        for d in dirs {
            if out.artifacts.len() >= limit {
                break;
            }
            match Self::read_one(&d) {
                Ok(a) => out.artifacts.push(a),
                Err(ExtractionError::Parse(msg)) => {
                    log::warn!("skipping fixture {}: {msg}", d.display());
                    out.parse_errors.push(msg);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

/// Bugzilla REST client. The first comment is taken as the report, comments
/// by commit bots as the fix history, and the first non-obsolete source
/// attachment as the reproducer.
#[derive(Debug, Clone)]
pub struct BugzillaSource {
    /// Tracker root, e.g. `https://gcc.gnu.org/bugzilla`.
    pub base_url: String,
    /// Extra search terms appended to `/rest/bug?`, e.g. `product=gcc&keywords=ice-on-valid-code`.
    pub query: String,
    pub retries: u32,
    pub backoff: Duration,
    agent: ureq::Agent,
}

impl BugzillaSource {
    pub fn new(base_url: impl Into<String>, query: impl Into<String>) -> Self {
        BugzillaSource {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            query: query.into(),
            retries: 3,
            backoff: Duration::from_millis(500),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(60)))
                .build()
                .into(),
        }
    }

    fn get(&self, path: &str) -> Result<Value, ExtractionError> {
        let url = format!("{}{path}", self.base_url);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.agent.get(&url).call() {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<Value>()
                        .map_err(|e| ExtractionError::Parse(format!("{url}: {e}")))
                }
                // Client errors will not go away by asking again.
                Err(ureq::Error::StatusCode(s)) if (400..500).contains(&s) => {
                    return Err(ExtractionError::Network(format!("GET {url}: status {s}")))
                }
                Err(e) => last = format!("GET {url}: {e}"),
            }
        }
        Err(ExtractionError::Network(last))
    }

    fn artifact(&self, id: &str, summary: &str) -> Result<BugArtifact, ExtractionError> {
        let comments = self.get(&format!("/rest/bug/{id}/comment"))?;
        let list = comments["bugs"][id]["comments"]
            .as_array()
            .ok_or_else(|| ExtractionError::Parse(format!("bug {id}: no comment list")))?;
        let text = |c: &Value| c["text"].as_str().unwrap_or_default().to_string();
        let first = list.first().map(text).unwrap_or_default();
        let report = if summary.is_empty() { first } else { format!("{summary}\n\n{first}") };
        let fix: Vec<String> = list
            .iter()
            .filter(|c| c["creator"].as_str().is_some_and(|who| who.contains("cvs-commit") || who.contains("commit")))
            .map(text)
            .collect();

        let attachments = self.get(&format!("/rest/bug/{id}/attachment"))?;
        let mut poc = String::new();
        if let Some(atts) = attachments["bugs"][id].as_array() {
            let source = atts.iter().find(|a| {
                let name = a["file_name"].as_str().unwrap_or_default();
                a["is_obsolete"].as_i64().unwrap_or(0) == 0
                    && [".c", ".cc", ".cpp", ".cxx", ".i", ".ii", ".C"].iter().any(|ext| name.ends_with(ext))
            });
            if let Some(a) = source {
                let data = a["data"].as_str().unwrap_or_default();
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(data)
                    .map_err(|e| ExtractionError::Parse(format!("bug {id}: attachment: {e}")))?;
                poc = String::from_utf8_lossy(&bytes).into_owned();
            }
        }
        BugArtifact::new(
            id,
            report,
            poc,
            fix.join("\n\n"),
            format!("{}/show_bug.cgi?id={id}", self.base_url),
        )
    }
}

impl ArtifactSource for BugzillaSource {
    fn fetch(&self, limit: usize) -> Result<FetchResult, ExtractionError> {
        let mut out = FetchResult::default();
        if limit == 0 {
            return Ok(out);
        }
        let sep = if self.query.is_empty() { "" } else { "&" };
        let listing = self.get(&format!(
            "/rest/bug?{}{sep}limit={limit}&include_fields=id,summary",
            self.query
        ))?;
        let bugs = listing["bugs"]
            .as_array()
            .ok_or_else(|| ExtractionError::Parse("search response has no bug list".into()))?;
        for b in bugs.iter().take(limit) {
            let id = match &b["id"] {
                Value::Number(n) => n.to_string(),
                Value::String(s) if !s.is_empty() => s.clone(),
                _ => {
                    out.parse_errors.push(format!("bug record without id: {b}"));
                    continue;
                }
            };
            match self.artifact(&id, b["summary"].as_str().unwrap_or_default()) {
                Ok(a) => out.artifacts.push(a),
                Err(ExtractionError::Parse(msg)) => out.parse_errors.push(msg),
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }
}

fn or_marker(s: &str) -> &str {
    if s.trim().is_empty() {
        NOT_AVAILABLE
    } else {
        s.trim_end()
    }
}

pub fn build_extraction_prompt(a: &BugArtifact) -> String {
    let root_cause = if a.fix_summary.trim().is_empty() {
        format!("root cause: {NOT_AVAILABLE}")
    } else {
        format!("root cause:\n{}", a.fix_summary.trim_end())
    };
    let lang = match detect_language(&a.poc_source) {
        Language::C => "c",
        Language::Cpp => "cpp",
    };
    fill(
        TEMPLATE,
        &[
            ("report", or_marker(&a.report_text)),
            ("lang", lang),
            ("poc", or_marker(&a.poc_source)),
            ("root_cause", &root_cause),
        ],
    )
}

static LINE_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\blines?\s+(\d+)(?:\s*(?:-|–|to)\s*(\d+))?").unwrap());

/// The smallest `line N` / `lines N-M` range mentioned in `text`, as source.
pub fn witness_from_line_refs(text: &str, poc: &str) -> Option<String> {
    let poc_lines: Vec<&str> = poc.lines().collect();
    LINE_REF
        .captures_iter(text)
        .filter_map(|c| {
            let a: usize = c[1].parse().ok()?;
            let b: usize = c.get(2).map_or(Some(a), |m| m.as_str().parse().ok())?;
            let (lo, hi) = (a.min(b), a.max(b));
            (lo >= 1 && hi <= poc_lines.len()).then_some((lo, hi))
        })
        .min_by_key(|(lo, hi)| (hi - lo, *lo))
        .map(|(lo, hi)| poc_lines[lo - 1..hi].join("\n"))
}

/// Parse the model's answer into the bug's collected group.
pub fn parse_extraction_response(text: &str, bug_id: &str) -> Result<FeatureGroup, ExtractionError> {
    parse_with_poc(text, bug_id, "")
}

fn parse_with_poc(text: &str, bug_id: &str, poc: &str) -> Result<FeatureGroup, ExtractionError> {
    let features: Vec<Feature> = parse_items(text)
        .into_iter()
        .filter_map(|item| {
            let witness = item
                .snippet
                .or_else(|| witness_from_line_refs(&item.text, poc))
                .unwrap_or_default();
            Feature::new(
                &repair_stem(&item.text),
                witness,
                Origin::Extracted {
                    bug_id: bug_id.to_string(),
                },
            )
            .ok()
        })
        .collect();
    FeatureGroup::new(features, GroupSource::Collected, Some(bug_id.to_string()))
        .map_err(|_| ExtractionError::NoFeaturesFound(bug_id.to_string()))
}

/// Fill witnesses that the response left empty from line ranges it mentions.
pub fn attach_poc_witnesses(g: &FeatureGroup, poc: &str) -> FeatureGroup {
    let features = g.iter().map(|f| {
        let mut f = f.clone();
        if f.witness.is_empty() {
            if let Some(w) = witness_from_line_refs(&f.description, poc) {
                f.witness = w;
            }
        }
        f
    });
    FeatureGroup::new(features, g.source, g.parent_bug.clone()).expect("non-empty group stays non-empty")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub artifacts: usize,
    pub groups: usize,
    pub features: usize,
    pub model_failures: usize,
    pub empty_responses: usize,
}

/// Extract one artifact; model failures are retried up to `retries` times.
pub fn extract_one<M: ChatModel + ?Sized>(
    a: &BugArtifact,
    model: &M,
    params: &ModelParams,
    retries: u32,
) -> Result<FeatureGroup, ExtractionError> {
    let prompt = build_extraction_prompt(a);
    let mut attempt = 0;
    let text = loop {
        let req = ModelRequest {
            params: params.clone(),
            attempt,
            request_id: format!("extract-{}-{attempt}", a.bug_id),
            ..ModelRequest::new(Role::Extract, prompt.clone())
        };
        match model.chat(&req) {
            Ok(t) => break t,
            Err(e) if e.is_retryable() && attempt < retries => attempt += 1,
            Err(e) => return Err(model_failure(e)),
        }
    };
    parse_with_poc(&text, &a.bug_id, &a.poc_source)
}

fn model_failure(e: ModelError) -> ExtractionError {
    ExtractionError::Network(e.to_string())
}

/// Run extraction over a batch. Per-artifact failures are logged and
/// counted; the batch itself never fails.
pub fn extract_batch<M: ChatModel + ?Sized>(
    artifacts: &[BugArtifact],
    model: &M,
    params: &ModelParams,
    retries: u32,
) -> (Vec<FeatureGroup>, ExtractionStats) {
    let mut stats = ExtractionStats {
        artifacts: artifacts.len(),
        ..ExtractionStats::default()
    };
    let mut groups = Vec::new();
    for a in artifacts {
        match extract_one(a, model, params, retries) {
            Ok(g) => {
                stats.features += g.len();
                groups.push(g);
            }
            Err(ExtractionError::NoFeaturesFound(id)) => {
                log::warn!("bug {id}: no features in response");
                stats.empty_responses += 1;
            }
            Err(e) => {
                log::warn!("bug {}: extraction failed: {e}", a.bug_id);
                stats.model_failures += 1;
            }
        }
    }
    stats.groups = groups.len();
    (groups, stats)
}

/// Add every group member to the pool; returns how many were new.
pub fn add_groups_to_pool(pool: &mut FeaturePool, groups: &[FeatureGroup]) -> usize {
    groups
        .iter()
        .flat_map(|g| g.iter())
        .filter(|f| pool.insert((*f).clone()).unwrap_or(false))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::stub::StubServer;
    use crate::llm::ScriptedModel;

    fn artifact(fix: &str) -> BugArtifact {
        BugArtifact::new(
            "PR12345",
            "ICE in fold_binary when compiling the attached file with -O2.",
            "struct s { int n; int a[]; };\nint f(struct s v) { return v.n; }\n",
            fix,
            "https://example.invalid/show_bug.cgi?id=12345",
        )
        .unwrap()
    }

    #[test]
    fn artifact_invariants() {
        assert!(BugArtifact::new("", "r", "", "", "").is_err());
        assert!(BugArtifact::new("1", " ", "", "", "").is_err());
        assert!(BugArtifact::new("1", "", "int x;", "", "").unwrap().partial);
        assert!(!artifact("fixed folding").partial);
    }

    #[test]
    fn prompt_marks_missing_root_cause() {
        let p = build_extraction_prompt(&artifact(""));
        assert!(p.contains("root cause: (not available)"));
        assert_eq!(p, build_extraction_prompt(&artifact("")));
        let p = build_extraction_prompt(&artifact("fold_binary mishandled flexible arrays"));
        assert!(p.contains("root cause:\nfold_binary mishandled flexible arrays"));
        assert!(p.contains("```c\nstruct s"));
        assert!(p.ends_with("[OutputExample]\nThe code should...\n"));
    }

    #[test]
    fn prompt_copies_braces_verbatim() {
        let mut a = artifact("");
        a.report_text = "saw {poc} in the log".into();
        let p = build_extraction_prompt(&a);
        assert!(p.contains("saw {poc} in the log"));
    }

    #[test]
    fn parse_numbered_and_bullets() {
        let numbered = "1. The code should use a flexible array member.\n2. The code should pass the struct by value.";
        let bullets = "- The code should use a flexible array member.\n- The code should pass the struct by value.";
        let a = parse_extraction_response(numbered, "7").unwrap();
        let b = parse_extraction_response(bullets, "7").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, b);
        assert_eq!(a.source, GroupSource::Collected);
        assert_eq!(a.parent_bug.as_deref(), Some("7"));
        assert!(a.iter().all(|f| f.description.starts_with("The code should")));
    }

    #[test]
    fn parse_empty_is_error() {
        assert!(matches!(parse_extraction_response("", "7"), Err(ExtractionError::NoFeaturesFound(_))));
    }

    #[test]
    fn snippet_and_line_witnesses() {
        let poc = "int a;\nint b;\nint c;\nint d;\n";
        let text = "1. The code should declare globals (lines 2-3).\n```c\nint g;\n```\n2. The code should use line 4 and lines 1-3.";
        let g = parse_with_poc(text, "1", poc).unwrap();
        let ws: Vec<&str> = g.iter().map(|f| f.witness.as_str()).collect();
        assert!(ws.contains(&"int g;"));
        assert!(ws.contains(&"int d;"));
        assert_eq!(witness_from_line_refs("see lines 9-12", poc), None);
    }

    #[test]
    fn fixtures_with_malformed_record() {
        let tmp = tempfile::tempdir().unwrap();
        for i in 0..5 {
            let d = tmp.path().join(format!("bug{i}"));
            fs::create_dir(&d).unwrap();
            if i == 2 {
                continue; // neither report nor PoC
            }
            fs::write(d.join("report.txt"), format!("report {i}\r\n")).unwrap();
            fs::write(d.join("poc.c"), "int main(void){}\n").unwrap();
        }
        fs::write(tmp.path().join("bug0/fix.txt"), "fixed").unwrap();
        let src = FixtureSource::new(tmp.path());
        let r = src.fetch(10).unwrap();
        assert_eq!(r.artifacts.len(), 4);
        assert_eq!(r.parse_errors.len(), 1);
        assert_eq!(r.artifacts[0].bug_id, "bug0");
        assert_eq!(r.artifacts[0].report_text, "report 0\r\n");
        assert!(!r.artifacts[0].partial && r.artifacts[1].partial);
        assert!(src.fetch(0).unwrap().artifacts.is_empty());
        assert_eq!(src.fetch(2).unwrap().artifacts.len(), 2);
    }

    #[test]
    fn batch_never_aborts() {
        let arts = vec![artifact(""), artifact("x"), artifact("y")];
        let m = ScriptedModel::default();
        m.push(Ok("1. The code should use alloca.".into()));
        m.push(Ok("".into()));
        m.push(Err(ModelError::ReplayMiss { hash: "h".into() }));
        let (groups, stats) = extract_batch(&arts, &m, &ModelParams::for_role(Role::Extract), 0);
        assert_eq!(groups.len(), 1);
        assert_eq!(stats.empty_responses, 1);
        assert_eq!(stats.model_failures, 1);
        let mut pool = FeaturePool::new();
        assert_eq!(add_groups_to_pool(&mut pool, &groups), 1);
        assert_eq!(add_groups_to_pool(&mut pool, &groups), 0);
    }

    #[test]
    fn bugzilla_over_stub() {
        let poc = base64::engine::general_purpose::STANDARD.encode("int main(void) { return 0; }\n");
        let server = StubServer::spawn(move |path, _| {
            let body = if path.starts_with("/rest/bug?") {
                assert!(path.contains("product=gcc") && path.contains("limit=2"));
                serde_json::json!({"bugs": [{"id": 101, "summary": "ICE on x"}, {"summary": "no id"}]})
            } else if path == "/rest/bug/101/comment" {
                serde_json::json!({"bugs": {"101": {"comments": [
                    {"text": "Compiling this crashes.", "creator": "user@example.org"},
                    {"text": "The master branch has been updated: fix folding", "creator": "cvs-commit@gcc.gnu.org"}
                ]}}})
            } else if path == "/rest/bug/101/attachment" {
                serde_json::json!({"bugs": {"101": [
                    {"file_name": "old.c", "is_obsolete": 1, "data": ""},
                    {"file_name": "t.c", "is_obsolete": 0, "data": poc}
                ]}})
            } else {
                return (404, "{}".into());
            };
            (200, body.to_string())
        });
        let src = BugzillaSource::new(server.root_url(), "product=gcc");
        let r = src.fetch(2).unwrap();
        assert_eq!(r.artifacts.len(), 1);
        assert_eq!(r.parse_errors.len(), 1);
        let a = &r.artifacts[0];
        assert_eq!(a.bug_id, "101");
        assert!(a.report_text.starts_with("ICE on x\n\nCompiling"));
        assert!(a.fix_summary.contains("fix folding"));
        assert_eq!(a.poc_source, "int main(void) { return 0; }\n");
        assert!(a.url.ends_with("show_bug.cgi?id=101"));
    }

    #[test]
    fn bugzilla_server_errors_are_retried() {
        let server = StubServer::spawn(|_, _| (503, "{}".into()));
        let mut src = BugzillaSource::new(server.root_url(), "");
        src.backoff = Duration::from_millis(1);
        assert!(matches!(src.fetch(1), Err(ExtractionError::Network(_))));
        assert_eq!(server.hits(), 4);
    }
}
