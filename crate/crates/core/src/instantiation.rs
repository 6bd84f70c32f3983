//! Turning a feature group into one C/C++ program.

use std::fmt::Write as _;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feature::FeatureGroup;
use crate::llm::{ChatModel, ModelParams, ModelRequest, Role};
use crate::template::fill;

const TEMPLATE: &str = include_str!("../prompts/instantiation.txt");

pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    C,
    Cpp,
}

impl Language {
    pub fn extension(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceProgram {
    pub code: String,
    pub language: Language,
    pub group_id: String,
    pub attempt: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstantiationError {
    #[error("response contains no recognizable C/C++ code")]
    NoCodeFound,
    #[error("instantiation failed after {attempts} attempts: {last}")]
    InstantiationFailed { attempts: u32, last: String },
}

/// Members are listed in id order, each followed by its witness (if any).
pub fn build_instantiation_prompt(g: &FeatureGroup) -> String {
    let mut list = String::new();
    for (i, f) in g.iter().enumerate() {
        let _ = writeln!(list, "{}. {}", i + 1, f.description);
        let w = f.witness.trim_end();
        if !w.trim().is_empty() {
            let _ = writeln!(list, "```c\n{w}\n```");
        }
    }
    fill(TEMPLATE, &[("features", list.trim_end())])
}

static PREAMBLE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(concat!(
        r"^\s*(?:",
        r"#\s*(?:include|define)\b",
        r"|int\s+main\s*\(",
        r"|(?:typedef|struct|union|enum|class|template|namespace)\b",
        r"|(?:(?:static|extern|inline|const|unsigned|signed|volatile)\s+)*",
        r"(?:void|int|char|long|short|float|double|unsigned|_Bool|bool|size_t)\b[\w\s\*]*\b\w+\s*\(",
        r")"
    ))
    .unwrap()
});

static CPP_ONLY: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\bclass\b|\btemplate\s*<|::|\bnamespace\b").unwrap());

pub fn detect_language(code: &str) -> Language {
    if CPP_ONLY.is_match(code) {
        Language::Cpp
    } else {
        Language::C
    }
}

fn first_fence(response: &str) -> Option<String> {
    let mut lines = response.lines();
    lines.by_ref().find(|l| l.trim_start().starts_with("```"))?;
    let body: Vec<&str> = lines.take_while(|l| !l.trim_start().starts_with("```")).collect();
    Some(body.join("\n"))
}

/// Code from the first fenced block, or failing that from the first line that
/// looks like the start of a translation unit.
pub fn extract_code_block(response: &str) -> Result<SourceProgram, InstantiationError> {
    let code = match first_fence(response) {
        Some(body) => body,
        None => {
            let lines: Vec<&str> = response.lines().collect();
            let start = lines
                .iter()
                .position(|l| PREAMBLE.is_match(l))
                .ok_or(InstantiationError::NoCodeFound)?;
            lines[start..].join("\n")
        }
    };
    if code.trim().is_empty() {
        return Err(InstantiationError::NoCodeFound);
    }
    let code = if code.ends_with('\n') { code } else { code + "\n" };
    Ok(SourceProgram {
        language: detect_language(&code),
        code,
        group_id: String::new(),
        attempt: 0,
    })
}

/// Ask the model for a program realizing `g`; up to `retries` further
/// attempts on model errors or code-less responses.
pub fn instantiate<M: ChatModel + ?Sized>(
    g: &FeatureGroup,
    model: &M,
    params: &ModelParams,
    retries: u32,
    iteration: u64,
) -> Result<SourceProgram, InstantiationError> {
    let prompt = build_instantiation_prompt(g);
    let group_id = g.group_id();
    let mut last = String::new();
    for attempt in 0..=retries {
        let req = ModelRequest {
            params: params.clone(),
            attempt,
            request_id: format!("instantiate-{iteration}-{attempt}"),
            ..ModelRequest::new(Role::Instantiate, prompt.clone())
        };
        match model.chat(&req).map_err(|e| e.to_string()).and_then(|text| {
            extract_code_block(&text).map_err(|e| e.to_string())
        }) {
            Ok(mut p) => {
                p.group_id = group_id;
                p.attempt = attempt;
                return Ok(p);
            }
            Err(e) => {
                log::debug!("iteration {iteration}: instantiation attempt {attempt} failed: {e}");
                last = e;
            }
        }
    }
    Err(InstantiationError::InstantiationFailed {
        attempts: retries + 1,
        last,
    })
}
