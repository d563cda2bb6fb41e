//! Extraction of labeled numbers (`y: 42.5`, `X_B: 10`) from free text.
//!
//! A line matches when it starts (after optional list/markdown markers)
//! with the label, a colon, and a number. Numbers may carry a sign, a
//! decimal part, an exponent, and comma thousands separators. The first
//! matching line wins; values are clipped to be non-negative.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::prompt::{LABEL_ST, LABEL_XB, LABEL_XV, LABEL_Y};

const NUMBER: &str = r"[+-]?(?:(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?";

fn label_regex(label: &str) -> Regex {
    // X_B also matches X\_B (markdown-escaped underscore)
    let label = regex::escape(label).replace('_', r"\\?_");
    Regex::new(&format!(
        r"(?i)^\s*[-*>#`_\s]*{label}[*_`]*\s*:\s*[*_`]*\s*({NUMBER})(.*)$"
    ))
    .unwrap()
}

static Y_RE: LazyLock<Regex> = LazyLock::new(|| label_regex(LABEL_Y));
static XB_RE: LazyLock<Regex> = LazyLock::new(|| label_regex(LABEL_XB));
static XV_RE: LazyLock<Regex> = LazyLock::new(|| label_regex(LABEL_XV));
static ST_RE: LazyLock<Regex> = LazyLock::new(|| label_regex(LABEL_ST));

/// The number must not run straight into more digits or letters (`42abc`,
/// `12,5`, `1.2.3`).
fn clean_tail(tail: &str) -> bool {
    let mut chars = tail.chars();
    match chars.next() {
        None => true,
        Some(c) if c.is_alphanumeric() || c == '.' || c == '_' => false,
        Some(',') => !chars.next().is_some_and(|c| c.is_ascii_digit()),
        Some(_) => true,
    }
}

fn extract(re: &Regex, raw: &str) -> Option<f64> {
    raw.lines().find_map(|line| {
        let caps = re.captures(line)?;
        if !clean_tail(caps.get(2).map_or("", |m| m.as_str())) {
            return None;
        }
        let v: f64 = caps[1].replace(',', "").parse().ok()?;
        v.is_finite().then_some(if v > 0.0 { v } else { 0.0 })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedY {
    pub value: Option<f64>,
    pub raw_text: String,
    pub retried: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParsedContext {
    pub x_b: Option<f64>,
    pub x_v: Option<f64>,
    pub s_t: Option<f64>,
    pub complete: bool,
    pub retried: bool,
}

impl ParsedContext {
    pub fn values(&self) -> [Option<f64>; 3] {
        [self.x_b, self.x_v, self.s_t]
    }
}

pub fn parse_y(raw: &str) -> ParsedY {
    ParsedY {
        value: extract(&Y_RE, raw),
        raw_text: raw.to_string(),
        retried: false,
    }
}

pub fn parse_context(raw: &str) -> ParsedContext {
    let x_b = extract(&XB_RE, raw);
    let x_v = extract(&XV_RE, raw);
    let s_t = extract(&ST_RE, raw);
    ParsedContext {
        x_b,
        x_v,
        s_t,
        complete: x_b.is_some() && x_v.is_some() && s_t.is_some(),
        retried: false,
    }
}
