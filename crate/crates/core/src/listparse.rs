//! Grammar for enumerated model responses.
//!
//! Accepted shapes, in order of precedence: numbered lists (`1.` / `1)`),
//! bullet lists (`-`, `*`, `+`, `•`), and blank-line separated paragraphs.
//! A fenced code block that follows an item (with nothing but blank lines in
//! between) is attached to that item as its snippet.

use std::sync::LazyLock;

use regex::Regex;

static NUMBERED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d+[.)]\s+(\S.*)$").unwrap());
static BULLET: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*[-*+•]\s+(\S.*)$").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ListItem {
    pub text: String,
    pub snippet: Option<String>,
}

#[derive(Debug)]
enum Event<'a> {
    Line(&'a str),
    Blank,
    Fence(String),
}

fn events(text: &str) -> Vec<Event<'_>> {
    let mut out = Vec::new();
    let mut fence: Option<Vec<&str>> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        match fence.as_mut() {
            Some(body) => {
                if trimmed.starts_with("```") {
                    out.push(Event::Fence(body.join("\n")));
                    fence = None;
                } else {
                    body.push(line);
                }
            }
            None => {
                if trimmed.starts_with("```") {
                    fence = Some(Vec::new());
                } else if trimmed.is_empty() {
                    out.push(Event::Blank);
                } else {
                    out.push(Event::Line(line));
                }
            }
        }
    }
    // An unterminated fence still counts as a snippet.
    if let Some(body) = fence {
        out.push(Event::Fence(body.join("\n")));
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Numbered,
    Bullet,
    Paragraph,
}

pub fn parse_items(text: &str) -> Vec<ListItem> {
    let evs = events(text);
    let lines = || {
        evs.iter().filter_map(|e| match e {
            Event::Line(l) => Some(*l),
            _ => None,
        })
    };
    let mode = if lines().any(|l| NUMBERED.is_match(l)) {
        Mode::Numbered
    } else if lines().any(|l| BULLET.is_match(l)) {
        Mode::Bullet
    } else {
        Mode::Paragraph
    };
    match mode {
        Mode::Paragraph => paragraphs(&evs),
        Mode::Numbered => list(&evs, &NUMBERED),
        Mode::Bullet => list(&evs, &BULLET),
    }
}

fn list(evs: &[Event<'_>], marker: &Regex) -> Vec<ListItem> {
    let mut items: Vec<ListItem> = Vec::new();
    // open: continuation lines still append; attachable: a fence may still attach.
    let mut open = false;
    let mut attachable = false;
    for ev in evs {
        match ev {
            Event::Line(l) => {
                if let Some(c) = marker.captures(l) {
                    items.push(ListItem {
                        text: c[1].trim().to_string(),
                        snippet: None,
                    });
                    open = true;
                    attachable = true;
                } else if open {
                    let last = items.last_mut().expect("open implies an item");
                    last.text.push(' ');
                    last.text.push_str(l.trim());
                } else {
                    attachable = false;
                }
            }
            Event::Blank => open = false,
            Event::Fence(body) => {
                if attachable {
                    if let Some(last) = items.last_mut() {
                        if last.snippet.is_none() && !body.trim().is_empty() {
                            last.snippet = Some(body.clone());
                        }
                    }
                }
                open = false;
                attachable = false;
            }
        }
    }
    items.retain(|i| !i.text.trim().is_empty());
    items
}

fn paragraphs(evs: &[Event<'_>]) -> Vec<ListItem> {
    let mut items: Vec<ListItem> = Vec::new();
    let mut open = false;
    let mut attachable = false;
    for ev in evs {
        match ev {
            Event::Line(l) => {
                if open {
                    let last = items.last_mut().expect("open implies an item");
                    last.text.push(' ');
                    last.text.push_str(l.trim());
                } else {
                    items.push(ListItem {
                        text: l.trim().to_string(),
                        snippet: None,
                    });
                    open = true;
                }
                attachable = true;
            }
            Event::Blank => open = false,
            Event::Fence(body) => {
                if attachable {
                    if let Some(last) = items.last_mut() {
                        if last.snippet.is_none() && !body.trim().is_empty() {
                            last.snippet = Some(body.clone());
                        }
                    }
                }
                open = false;
                attachable = false;
            }
        }
    }
    // Prose paragraphs around the answer ("Here are the features:") are
    // dropped when at least one paragraph has the expected stem.
    if items.iter().any(|i| has_stem(&i.text)) {
        items.retain(|i| has_stem(&i.text));
    }
    items
}

pub const STEM: &str = "The code should";

pub fn has_stem(text: &str) -> bool {
    text.len() >= STEM.len()
        && text.is_char_boundary(STEM.len())
        && text[..STEM.len()].eq_ignore_ascii_case(STEM)
}

/// Prefix `The code should` when the item lacks it; an already stemmed item
/// gets its stem case fixed.
pub fn repair_stem(text: &str) -> String {
    let text = text.trim();
    if has_stem(text) {
        return format!("{STEM}{}", &text[STEM.len()..]);
    }
    let mut chars = text.chars();
    let Some(first) = chars.next() else {
        return String::new();
    };
    let rest = chars.as_str();
    let second_is_lower = rest.chars().next().is_some_and(|c| c.is_lowercase());
    let head = if first.is_uppercase() && second_is_lower {
        first.to_lowercase().collect::<String>()
    } else {
        first.to_string()
    };
    format!("{STEM} {head}{rest}")
}
