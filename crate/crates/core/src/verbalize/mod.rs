//! Turning triplet sets into paragraphs, checking that a paragraph carries
//! its triplets, and locating the sentences that realize each conflict.

mod coverage;

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fact::{Fact, Term};
use crate::kg::SurfaceForms;
use crate::registry::RelationRegistry;
use crate::templates::{TemplateName, Templates};
use crate::text::{capitalize, normalize, split_sentences, SentenceSpan};

pub use coverage::{coverage_check, locate_gold_sentences, CoverageConfig, CoverageReport, GoldPair, RelationMatch};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerbalizeError {
    #[error("no triplets to verbalize or verify")]
    EmptyTriplets,
    #[error("context is empty")]
    EmptyContext,
    #[error("the two contexts are identical; no conflict is realized")]
    IdenticalContexts,
    #[error("perturbation group {group} could not be located in context {side}")]
    Unlocatable { group: usize, side: char },
    #[error("verifier answer is neither \"No error\" nor \"Yes error\": {0:?}")]
    UnparseableVerdict(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    Model,
    Template,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoError,
    YesError,
    Skipped,
}

/// The sentences of a context that express one fact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceLink {
    pub fact: Fact,
    pub sentences: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbalizedContext {
    pub text: String,
    pub sentences: Vec<SentenceSpan>,
    /// Filled by the template path; empty for model text, whose sentences
    /// are found by coverage matching instead.
    #[serde(default)]
    pub triplet_sentence_map: Vec<SentenceLink>,
    pub source: ContextSource,
}

impl VerbalizedContext {
    pub fn from_text(text: impl Into<String>, source: ContextSource) -> Self {
        let text = text.into();
        let sentences = split_sentences(&text);
        VerbalizedContext { text, sentences, triplet_sentence_map: Vec::new(), source }
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn mapped(&self, fact: &Fact) -> Option<&[usize]> {
        self.triplet_sentence_map.iter().find(|l| &l.fact == fact).map(|l| l.sentences.as_slice())
    }

    pub fn sentence_texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.text.as_str()).collect()
    }

    /// Spans tile the text and every mapped index is in range.
    pub fn check_invariants(&self) -> bool {
        let mut pos = 0;
        for s in &self.sentences {
            if s.start != pos || s.end < s.start {
                return false;
            }
            pos = s.end;
        }
        let tiled = if self.sentences.is_empty() { self.text.trim().is_empty() } else { pos == self.text.len() };
        tiled && self.triplet_sentence_map.iter().all(|l| l.sentences.iter().all(|&i| i < self.sentences.len()))
    }
}

fn entity_surface(t: &Term, aliases: &dyn SurfaceForms) -> String {
    match t {
        Term::Id(id) => aliases.entity_label(id),
        Term::Text(s) => s.clone(),
    }
}

/// One clause for `fact`, not capitalized and without final punctuation.
fn clause(fact: &Fact, aliases: &dyn SurfaceForms, registry: &RelationRegistry) -> String {
    let s = entity_surface(&fact.subject, aliases);
    let o = entity_surface(&fact.object, aliases);
    let positive = match &fact.relation {
        Term::Id(id) => match registry.get(&id.as_str().into()) {
            Some(entry) => {
                if fact.negated {
                    if let Some(c) = entry.negated_clause(&s, &o) {
                        return c;
                    }
                }
                entry.clause(&s, &o)
            }
            None if fact.negated => return format!("the {} of {s} is not {o}", aliases.relation_label(id)),
            None => format!("the {} of {s} is {o}", aliases.relation_label(id)),
        },
        Term::Text(r) => format!("{s} {r} {o}"),
    };
    if fact.negated {
        format!("it is not true that {positive}")
    } else {
        positive
    }
}

fn finish(sentence: String) -> String {
    if sentence.ends_with(['.', '!', '?']) {
        sentence
    } else {
        sentence + "."
    }
}

/// Deterministic offline verbalization: one sentence per fact, with
/// consecutive facts about the same subject joined into one sentence at
/// random. Duplicate facts are rendered once.
pub fn template_verbalize<R: Rng + ?Sized>(
    facts: &[Fact],
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
    rng: &mut R,
) -> VerbalizedContext {
    let mut seen = HashSet::new();
    let facts: Vec<&Fact> = facts.iter().filter(|f| seen.insert(*f)).collect();

    // (sentence, facts it renders)
    let mut built: Vec<(String, Vec<&Fact>)> = Vec::new();
    let mut i = 0;
    while i < facts.len() {
        let first = clause(facts[i], aliases, registry);
        let pair = i + 1 < facts.len() && facts[i + 1].subject == facts[i].subject && rng.random_bool(0.5);
        if pair {
            let second = clause(facts[i + 1], aliases, registry);
            let first = first.trim_end_matches(['.', '!', '?']);
            built.push((finish(format!("{}, and {second}", capitalize(first))), vec![facts[i], facts[i + 1]]));
            i += 2;
        } else {
            built.push((finish(capitalize(&first)), vec![facts[i]]));
            i += 1;
        }
    }

    let mut text = String::new();
    let mut offsets = Vec::with_capacity(built.len());
    for (k, (sentence, _)) in built.iter().enumerate() {
        if k > 0 {
            text.push(' ');
        }
        offsets.push(text.len());
        text.push_str(sentence);
    }
    let mut ctx = VerbalizedContext::from_text(text, ContextSource::Template);
    // Re-derive indices from the shared splitter so the map agrees with
    // what evaluation sees, even if a label merges two sentences.
    for ((_, rendered), &offset) in built.iter().zip(&offsets) {
        let idx = ctx.sentences.iter().position(|s| s.start <= offset && offset < s.end).unwrap_or(0);
        for fact in rendered {
            ctx.triplet_sentence_map.push(SentenceLink { fact: (*fact).clone(), sentences: vec![idx] });
        }
    }
    ctx
}

fn triplet_lines(facts: &[Fact], aliases: &dyn SurfaceForms, registry: &RelationRegistry) -> String {
    facts.iter().map(|f| f.surface(aliases, registry).to_string()).collect::<Vec<_>>().join("\n")
}

/// Prompt asking a model to write one paragraph carrying every fact.
pub fn build_conversion_prompt(
    templates: &Templates,
    facts: &[Fact],
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
) -> Result<String, VerbalizeError> {
    if facts.is_empty() {
        return Err(VerbalizeError::EmptyTriplets);
    }
    Ok(templates.render(TemplateName::KgToText, &[("triplets", &triplet_lines(facts, aliases, registry))]))
}

/// Prompt asking a model whether `context` faithfully carries `facts`.
pub fn build_verification_prompt(
    templates: &Templates,
    facts: &[Fact],
    context: &str,
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
) -> Result<String, VerbalizeError> {
    if facts.is_empty() {
        return Err(VerbalizeError::EmptyTriplets);
    }
    if context.trim().is_empty() {
        return Err(VerbalizeError::EmptyContext);
    }
    Ok(templates.render(
        TemplateName::KgToTextVerify,
        &[("triplets", &triplet_lines(facts, aliases, registry)), ("context", context)],
    ))
}

/// Read the verifier's answer. A leading verdict wins; otherwise the answer
/// must mention exactly one of the two.
pub fn parse_verdict(raw: &str) -> Result<Verdict, VerbalizeError> {
    let norm = normalize(raw);
    if norm.starts_with("no error") {
        return Ok(Verdict::NoError);
    }
    if norm.starts_with("yes error") {
        return Ok(Verdict::YesError);
    }
    match (norm.contains("no error"), norm.contains("yes error")) {
        (true, false) => Ok(Verdict::NoError),
        (false, true) => Ok(Verdict::YesError),
        _ => Err(VerbalizeError::UnparseableVerdict(raw.to_string())),
    }
}
