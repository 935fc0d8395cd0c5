//! Detection prompting and response parsing, ID/LOC scoring, parametric
//! probing and quality ratings.

mod baseline;
mod probe;
mod score;

use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::templates::{TemplateName, Templates};
use crate::text::normalize;

pub use baseline::{DiffBaseline, BASELINE_MODEL};
pub use probe::{
    mean_rating, parse_rating, probe_parametric, probe_question, rate_quality, ParametricClass, ProbeConfig,
    ProbeOutcome, QualityDimension,
};
pub use score::{
    aggregate, length_bins, match_localization, score_instance, AggregateRow, Aggregation, GroupKey, InstanceScore,
    ScoreSheet, SheetKeys, DEFAULT_ALIGNMENT_THRESHOLD,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("context {0} is empty")]
    EmptyContext(char),
    #[error("expected exactly 3 runs, got {0}")]
    RunCount(usize),
    #[error("no score sheets to aggregate")]
    NoSheets,
    #[error("unknown grouping key {0:?}")]
    UnknownKey(String),
    #[error("bin count must be at least 1")]
    BinCount,
    #[error("nothing to bin")]
    NoInstances,
    #[error("relation {0} has no question template")]
    NoQuestion(String),
    #[error("rating reply is not an integer from 0 to 5: {raw:?}")]
    Rating { raw: String },
    #[error("model call failed: {0}")]
    Model(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Yes/No question; identification only.
    Binary,
    /// Enumerate conflicts with the two quoted sentences.
    #[default]
    MultiStep,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "binary" => Ok(Strategy::Binary),
            "multi_step" => Ok(Strategy::MultiStep),
            other => Err(format!("unknown strategy {other:?} (expected binary or multi_step)")),
        }
    }
}

impl Strategy {
    fn template(self) -> TemplateName {
        match self {
            Strategy::Binary => TemplateName::DetectBinary,
            Strategy::MultiStep => TemplateName::DetectMultiStep,
        }
    }
}

pub fn build_detection_prompt(
    templates: &Templates,
    context_a: &str,
    context_b: &str,
    strategy: Strategy,
) -> Result<String, EvalError> {
    if context_a.trim().is_empty() {
        return Err(EvalError::EmptyContext('A'));
    }
    if context_b.trim().is_empty() {
        return Err(EvalError::EmptyContext('B'));
    }
    Ok(templates.render(strategy.template(), &[("context_a", context_a), ("context_b", context_b)]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    /// The reply follows the response format exactly.
    Clean,
    /// Usable parts were salvaged from a malformed reply.
    Recovered,
    /// Nothing usable; scored as no detection.
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictedConflict {
    pub reason: String,
    pub sentence_a: String,
    pub sentence_b: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub n_claimed: usize,
    pub conflicts: Vec<PredictedConflict>,
    pub parse_status: ParseStatus,
    pub raw: String,
}

impl DetectionResult {
    fn none(raw: &str, parse_status: ParseStatus) -> Self {
        DetectionResult { detected: false, n_claimed: 0, conflicts: Vec::new(), parse_status, raw: raw.to_string() }
    }
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^conflicts\s*:\s*(\d+)\s*$").unwrap());
static BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^conflict\s+(\d+)\s*:?$").unwrap());
static FIELD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:[-*\u{2022}]\s*)?(reason|sentence\s*a|sentence\s*b)\s*:\s*(.*)$").unwrap());

/// Markdown emphasis and stray whitespace around a line.
fn strip_line(line: &str) -> &str {
    line.trim().trim_matches('*').trim().trim_end_matches('.').trim()
}

fn unquote(s: &str) -> String {
    let s = s.trim();
    let s = s.strip_prefix(['"', '\u{201c}']).unwrap_or(s);
    let s = s.strip_suffix(['"', '\u{201d}']).unwrap_or(s);
    s.trim().to_string()
}

#[derive(Default)]
struct Block {
    reason: Option<String>,
    a: Option<String>,
    b: Option<String>,
    stray: bool,
}

/// Parse a detection reply. Never panics; unreadable replies come back
/// `Failed` and count as no detection.
pub fn parse_detection_response(raw: &str, strategy: Strategy) -> DetectionResult {
    match strategy {
        Strategy::Binary => parse_binary(raw),
        Strategy::MultiStep => parse_multi_step(raw),
    }
}

fn parse_binary(raw: &str) -> DetectionResult {
    let norm = normalize(raw);
    let mut toks = norm.split(' ').filter(|t| !t.is_empty());
    let verdict = |t: &str| match t {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    };
    let (detected, status) = match toks.next().and_then(verdict) {
        Some(d) if norm == "yes" || norm == "no" => (d, ParseStatus::Clean),
        Some(d) => (d, ParseStatus::Recovered),
        None => match norm.split(' ').find_map(verdict) {
            Some(d) => (d, ParseStatus::Recovered),
            None => return DetectionResult::none(raw, ParseStatus::Failed),
        },
    };
    DetectionResult { detected, n_claimed: usize::from(detected), conflicts: Vec::new(), parse_status: status, raw: raw.to_string() }
}

fn parse_multi_step(raw: &str) -> DetectionResult {
    let mut no_conflicts = false;
    let mut header: Option<usize> = None;
    let mut blocks: Vec<Block> = Vec::new();
    let mut stray_outside = false;
    let mut out_of_order = false;
    for line in raw.lines() {
        let line = line.replace("**", "");
        let l = strip_line(&line);
        if l.is_empty() {
            continue;
        }
        if l.eq_ignore_ascii_case("no conflicts") || l.eq_ignore_ascii_case("output: no conflicts") {
            no_conflicts = true;
        } else if let Some(c) = HEADER.captures(l) {
            if header.is_some() {
                stray_outside = true;
            }
            header = c[1].parse().ok().or(Some(usize::MAX));
        } else if let Some(c) = BLOCK.captures(l) {
            if c[1].parse::<usize>().ok() != Some(blocks.len() + 1) {
                out_of_order = true;
            }
            blocks.push(Block::default());
        } else if let Some(c) = FIELD.captures(line.trim()) {
            let Some(block) = blocks.last_mut() else {
                stray_outside = true;
                continue;
            };
            let value = c[2].trim().to_string();
            let key = c[1].to_ascii_lowercase().replace(char::is_whitespace, "");
            let slot = match key.as_str() {
                "reason" => &mut block.reason,
                "sentencea" => &mut block.a,
                _ => &mut block.b,
            };
            if slot.is_some() {
                block.stray = true;
            }
            *slot = Some(if key == "reason" { value } else { unquote(&value) });
        } else {
            match blocks.last_mut() {
                Some(b) => b.stray = true,
                None => stray_outside = true,
            }
        }
    }

    let complete = |b: &Block| b.a.as_ref().is_some_and(|s| !s.is_empty()) && b.b.as_ref().is_some_and(|s| !s.is_empty());
    let conflicts: Vec<PredictedConflict> = blocks
        .iter()
        .filter(|b| complete(b))
        .map(|b| PredictedConflict {
            reason: b.reason.clone().unwrap_or_default(),
            sentence_a: b.a.clone().unwrap_or_default(),
            sentence_b: b.b.clone().unwrap_or_default(),
        })
        .collect();

    let claimed = header.unwrap_or(blocks.len());
    if header.is_none() && blocks.is_empty() {
        if no_conflicts {
            let status = if stray_outside { ParseStatus::Recovered } else { ParseStatus::Clean };
            return DetectionResult::none(raw, status);
        }
        return DetectionResult::none(raw, ParseStatus::Failed);
    }
    if claimed == 0 && conflicts.is_empty() {
        return DetectionResult::none(raw, ParseStatus::Recovered);
    }
    let clean = header == Some(blocks.len())
        && !no_conflicts
        && !stray_outside
        && !out_of_order
        && blocks.iter().all(|b| complete(b) && b.reason.as_ref().is_some_and(|r| !r.is_empty()) && !b.stray);
    DetectionResult {
        detected: true,
        n_claimed: if claimed == usize::MAX { conflicts.len() } else { claimed },
        conflicts,
        parse_status: if clean { ParseStatus::Clean } else { ParseStatus::Recovered },
        raw: raw.to_string(),
    }
}
