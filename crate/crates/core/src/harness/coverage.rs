//! Coverage maps and the parsers that feed them.
//!
//! Two sources are supported: a byte-per-edge bitmap (index = edge id,
//! nonzero = hit) as written by AFL-style instrumentation, and line reports
//! in lcov tracefile, gcov text, or gcov JSON format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{CompilerConfig, CoverageMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Edge,
    Line,
    None,
}

impl UnitKind {
    pub fn for_mode(mode: CoverageMode) -> Self {
        match mode {
            CoverageMode::EdgeBitmap => UnitKind::Edge,
            CoverageMode::LineReport => UnitKind::Line,
            CoverageMode::None => UnitKind::None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("coverage unit kinds differ: {left:?} vs {right:?}")]
pub struct UnitKindMismatch {
    pub left: UnitKind,
    pub right: UnitKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("coverage unavailable: {0}")]
pub struct CoverageUnavailable(pub String);

/// Set of covered units. Merging is set union.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageMap {
    pub unit_kind: UnitKind,
    covered: BTreeSet<String>,
}

impl CoverageMap {
    pub fn new(unit_kind: UnitKind) -> Self {
        CoverageMap {
            unit_kind,
            covered: BTreeSet::new(),
        }
    }

    pub fn from_units<I, S>(unit_kind: UnitKind, units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        CoverageMap {
            unit_kind,
            covered: units.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.covered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covered.is_empty()
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.covered.contains(unit)
    }

    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.covered.iter().map(String::as_str)
    }

    pub fn check_kind(&self, other: &CoverageMap) -> Result<(), UnitKindMismatch> {
        if self.unit_kind == other.unit_kind {
            Ok(())
        } else {
            Err(UnitKindMismatch {
                left: self.unit_kind,
                right: other.unit_kind,
            })
        }
    }

    pub fn intersection_len(&self, other: &CoverageMap) -> usize {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.covered.iter().filter(|u| large.covered.contains(*u)).count()
    }

    /// Union `snap` into `self`; returns how many units were new.
    pub fn merge(&mut self, snap: &CoverageMap) -> Result<usize, UnitKindMismatch> {
        self.check_kind(snap)?;
        let before = self.covered.len();
        self.covered.extend(snap.covered.iter().cloned());
        Ok(self.covered.len() - before)
    }

    /// Sorted unit list, one per line, after a `# unit_kind=` header.
    pub fn write_sorted(&self, path: &Path) -> io::Result<()> {
        let mut out = format!("# unit_kind={}\n", serde_json::to_value(self.unit_kind)?.as_str().unwrap_or("none"));
        for u in &self.covered {
            out.push_str(u);
            out.push('\n');
        }
        fs::write(path, out)
    }

    /// Read a unit list; files without a header are taken as line units.
    pub fn read_sorted(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut kind = UnitKind::Line;
        let mut covered = BTreeSet::new();
        for line in text.lines() {
            let t = line.trim();
            if let Some(k) = t.strip_prefix("# unit_kind=") {
                kind = serde_json::from_value(serde_json::Value::String(k.to_string()))
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            } else if !t.is_empty() && !t.starts_with('#') {
                covered.insert(t.to_string());
            }
        }
        Ok(CoverageMap {
            unit_kind: kind,
            covered,
        })
    }
}

/// `(global ∪ snap, |snap \ global|)`.
pub fn merge_coverage(
    global: &CoverageMap,
    snap: &CoverageMap,
) -> Result<(CoverageMap, usize), UnitKindMismatch> {
    let mut g = global.clone();
    let delta = g.merge(snap)?;
    Ok((g, delta))
}

/// Indices of nonzero bytes.
pub fn parse_bitmap(bytes: &[u8]) -> CoverageMap {
    CoverageMap::from_units(
        UnitKind::Edge,
        bytes
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0)
            .map(|(i, _)| i.to_string()),
    )
}

/// Executed `file:line` pairs from an lcov tracefile, a gcov JSON document,
/// or gcov text output.
pub fn parse_line_report(text: &str) -> Result<CoverageMap, CoverageUnavailable> {
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        return parse_gcov_json(trimmed);
    }
    if text.lines().any(|l| l.starts_with("SF:")) {
        return Ok(parse_lcov(text));
    }
    Ok(parse_gcov_text(text))
}

fn parse_lcov(text: &str) -> CoverageMap {
    let mut map = CoverageMap::new(UnitKind::Line);
    let mut file: Option<&str> = None;
    for line in text.lines() {
        let line = line.trim();
        if let Some(f) = line.strip_prefix("SF:") {
            file = Some(f);
        } else if line == "end_of_record" {
            file = None;
        } else if let (Some(f), Some(rest)) = (file, line.strip_prefix("DA:")) {
            let mut parts = rest.split(',');
            let (Some(ln), Some(count)) = (parts.next(), parts.next()) else { continue };
            let hit = count.trim().parse::<f64>().map(|c| c > 0.0).unwrap_or(false);
            if hit {
                map.covered.insert(format!("{f}:{}", ln.trim()));
            }
        }
    }
    map
}

fn parse_gcov_text(text: &str) -> CoverageMap {
    let mut map = CoverageMap::new(UnitKind::Line);
    let mut file = String::new();
    for line in text.lines() {
        let mut cols = line.splitn(3, ':');
        let (Some(count), Some(lineno), rest) = (cols.next(), cols.next(), cols.next()) else {
            continue;
        };
        let count = count.trim();
        let lineno = lineno.trim();
        if lineno == "0" {
            if let Some(src) = rest.and_then(|r| r.strip_prefix("Source:")) {
                file = src.trim().to_string();
            }
            continue;
        }
        let hits = count.trim_end_matches('*').replace(',', "");
        if hits.parse::<u64>().map(|c| c > 0).unwrap_or(false) && lineno.parse::<u64>().is_ok() {
            map.covered.insert(format!("{file}:{lineno}"));
        }
    }
    map
}

fn parse_gcov_json(text: &str) -> Result<CoverageMap, CoverageUnavailable> {
    #[derive(Deserialize)]
    struct Doc {
        files: Vec<FileRec>,
    }
    #[derive(Deserialize)]
    struct FileRec {
        file: String,
        lines: Vec<LineRec>,
    }
    #[derive(Deserialize)]
    struct LineRec {
        line_number: u64,
        count: u64,
    }
    let doc: Doc = serde_json::from_str(text).map_err(|e| CoverageUnavailable(format!("gcov json: {e}")))?;
    Ok(CoverageMap::from_units(
        UnitKind::Line,
        doc.files.iter().flat_map(|f| {
            f.lines
                .iter()
                .filter(|l| l.count > 0)
                .map(move |l| format!("{}:{}", f.file, l.line_number))
        }),
    ))
}

/// Read the coverage produced by the run that just finished in `run_dir`.
pub fn measure_coverage(run_dir: &Path, cfg: &CompilerConfig) -> Result<CoverageMap, CoverageUnavailable> {
    match cfg.coverage_mode {
        CoverageMode::None => Ok(CoverageMap::new(UnitKind::None)),
        CoverageMode::EdgeBitmap => {
            let path = cfg
                .coverage_path
                .as_ref()
                .ok_or_else(|| CoverageUnavailable("no bitmap path configured".into()))?;
            let bytes = fs::read(path).map_err(|e| CoverageUnavailable(format!("{}: {e}", path.display())))?;
            Ok(parse_bitmap(&bytes))
        }
        CoverageMode::LineReport => {
            if let Some(reporter) = &cfg.coverage_reporter {
                let (prog, args) = reporter
                    .split_first()
                    .ok_or_else(|| CoverageUnavailable("empty reporter command".into()))?;
                let out = Command::new(prog)
                    .args(args)
                    .current_dir(run_dir)
                    .stdin(Stdio::null())
                    .output()
                    .map_err(|e| CoverageUnavailable(format!("reporter: {e}")))?;
                if !out.status.success() {
                    return Err(CoverageUnavailable(format!("reporter exited with {}", out.status)));
                }
                parse_line_report(&String::from_utf8_lossy(&out.stdout))
            } else {
                let path = cfg
                    .coverage_path
                    .as_ref()
                    .ok_or_else(|| CoverageUnavailable("no report path configured".into()))?;
                let text = fs::read_to_string(path)
                    .map_err(|e| CoverageUnavailable(format!("{}: {e}", path.display())))?;
                parse_line_report(&text)
            }
        }
    }
}

/// Count covered line units per component by longest matching path prefix.
/// Units matching no prefix are counted under `"other"`.
pub fn attribute_components(map: &CoverageMap, prefixes: &BTreeMap<String, String>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for unit in map.units() {
        let file = unit.rsplit_once(':').map(|(f, _)| f).unwrap_or(unit);
        let component = prefixes
            .iter()
            .filter(|(p, _)| file.starts_with(p.as_str()))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, c)| c.as_str())
            .unwrap_or("other");
        *out.entry(component.to_string()).or_insert(0) += 1;
    }
    out
}
