//! Text normalization and the sentence splitter shared by gold labeling and
//! localization scoring.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

/// A sentence inside a context. `start..end` tile the source text (leading
/// and trailing whitespace belong to the span); `text` is the trimmed slice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "ft", "no", "nos", "vs", "etc", "inc",
    "ltd", "co", "corp", "dept", "univ", "gen", "col", "lt", "sgt", "capt", "rev", "hon", "gov",
    "sen", "rep", "approx", "ca", "cf", "fig", "vol", "ed", "eds", "jan", "feb", "mar", "apr",
    "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "e.g", "i.e", "a.d", "b.c",
];

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}', '»'];
const OPENERS: &[char] = &['"', '\'', '(', '[', '\u{201c}', '\u{2018}', '«'];

/// Split `text` into sentences at terminal punctuation followed by whitespace
/// and a sentence-initial character. Abbreviations and initials ("J.",
/// "D.C.", "St.") do not end a sentence. Whitespace-only text yields no
/// sentences.
pub fn split_sentences(text: &str) -> Vec<SentenceSpan> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut spans = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if !matches!(c, '.' | '!' | '?') {
            i += 1;
            continue;
        }
        let mut k = i + 1;
        while k < chars.len() && (matches!(chars[k].1, '.' | '!' | '?') || CLOSERS.contains(&chars[k].1)) {
            k += 1;
        }
        if k >= chars.len() || !chars[k].1.is_whitespace() {
            i = k.max(i + 1);
            continue;
        }
        let mut m = k;
        while m < chars.len() && chars[m].1.is_whitespace() {
            m += 1;
        }
        if m >= chars.len() {
            break;
        }
        let next = chars[m].1;
        let opens = next.is_uppercase() || next.is_ascii_digit() || OPENERS.contains(&next);
        if opens && !(c == '.' && is_abbreviation(&text[..pos])) {
            let boundary = chars[m].0;
            push_span(text, start, boundary, &mut spans);
            start = boundary;
        }
        i = m;
    }
    push_span(text, start, text.len(), &mut spans);
    spans
}

fn push_span(text: &str, start: usize, end: usize, spans: &mut Vec<SentenceSpan>) {
    let slice = &text[start..end];
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        // Trailing whitespace with no content joins the previous span.
        if let Some(last) = spans.last_mut() {
            last.end = end;
        }
        return;
    }
    spans.push(SentenceSpan { start, end, text: trimmed.to_string() });
}

/// Whether the word ending right before a '.' is an abbreviation or initial.
fn is_abbreviation(before: &str) -> bool {
    let word: String = before
        .chars()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_start_matches(|c: char| OPENERS.contains(&c) || c == ',');
    if word.is_empty() {
        return false;
    }
    let lower = word.to_lowercase();
    if ABBREVIATIONS.contains(&lower.as_str()) {
        return true;
    }
    // Initials and initialisms: every dot-separated piece is one letter.
    word.split('.').all(|piece| {
        let mut cs = piece.chars();
        matches!((cs.next(), cs.next()), (Some(ch), None) if ch.is_alphabetic())
    })
}

/// Lowercased alphanumeric tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Token sequence joined by single spaces; casefolded and punctuation-free.
pub fn normalize(text: &str) -> String {
    tokens(text).join(" ")
}

/// Crude suffix stripping so that "captained", "captains" and "captain"
/// compare equal. Applied symmetrically, never shown to users.
pub fn stem(token: &str) -> String {
    let n = token.chars().count();
    let strip = |suffix: &str| token[..token.len() - suffix.len()].to_string();
    if n > 4 && token.ends_with("ies") {
        return format!("{}y", strip("ies"));
    }
    if n > 5 && token.ends_with("ing") {
        return strip("ing");
    }
    if n > 4 && token.ends_with("ed") {
        return strip("ed");
    }
    if n > 4 && token.ends_with("es") && !token.ends_with("ses") {
        return strip("es");
    }
    if n > 3 && token.ends_with('s') && !token.ends_with("ss") {
        return strip("s");
    }
    token.to_string()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "is", "are", "was", "were", "be", "been", "being", "by", "to", "in",
    "on", "at", "with", "for", "as", "and", "has", "have", "had", "its", "it", "from", "into",
    "that", "this", "which",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

const NEGATION_CUES: &[&str] = &[
    "not", "no", "never", "none", "nor", "neither", "cannot", "doesn", "don", "isn", "wasn",
    "weren", "aren", "didn", "hasn", "haven", "hadn", "won", "wouldn", "couldn", "shouldn",
];

pub fn is_negation_cue(token: &str) -> bool {
    NEGATION_CUES.contains(&token)
}

/// Stemmed content tokens of a phrase (stopwords removed).
pub fn content_stems(phrase: &str) -> Vec<String> {
    tokens(phrase)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .map(|t| stem(&t))
        .collect()
}

/// Token-set Jaccard similarity; 0 when both sides are empty.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = tokens(a).into_iter().collect();
    let sb: BTreeSet<String> = tokens(b).into_iter().collect();
    if sa.is_empty() && sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// Whitespace token count, the length unit used for binning and reports.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Uppercase the first character.
pub fn capitalize(s: &str) -> String {
    let mut cs = s.chars();
    match cs.next() {
        Some(first) => first.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

/// Find every start index of `needle` as a contiguous run inside `haystack`.
pub fn find_subsequence(haystack: &[String], needle: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    (0..=haystack.len() - needle.len())
        .filter(|&i| haystack[i..i + needle.len()] == *needle)
        .collect()
}
