use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{ContextSource, VerbalizeError, VerbalizedContext, Verdict};
use crate::conflict::PerturbationGroup;
use crate::fact::{Fact, Term};
use crate::kg::SurfaceForms;
use crate::registry::RelationRegistry;
use crate::text::{content_stems, is_negation_cue, normalize, stem, tokens};

/// How strictly the relation must show up in a sentence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationMatch {
    /// The content words of some surface form of the relation appear.
    #[default]
    Tokens,
    /// Only the polarity is checked: a negation cue for denied facts, none
    /// between the two mentions otherwise.
    Polarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    pub min_subgraph_coverage: f64,
    pub relation_match: RelationMatch,
    /// A sentence opening with a pronoun also mentions the first entity of
    /// the previous sentence.
    pub anaphora: bool,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig { min_subgraph_coverage: 0.8, relation_match: RelationMatch::Tokens, anaphora: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub conflict_covered: bool,
    pub conflict_coverage_ratio: f64,
    pub subgraph_coverage_ratio: f64,
    /// Conflict facts first, then subgraph facts.
    pub missing_triplets: Vec<Fact>,
    pub verifier_verdict: Verdict,
}

impl CoverageReport {
    /// Whether the context may enter the dataset: conflict facts present,
    /// enough of the subgraph present, and a clean verifier verdict unless
    /// the text came from templates.
    pub fn admissible(&self, config: &CoverageConfig, source: ContextSource) -> bool {
        let verified = match source {
            ContextSource::Template => self.verifier_verdict != Verdict::YesError,
            ContextSource::Model => self.verifier_verdict == Verdict::NoError,
        };
        self.conflict_covered && self.subgraph_coverage_ratio >= config.min_subgraph_coverage && verified
    }
}

/// Gold sentences for one perturbation group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub group: usize,
    pub a_sentences: Vec<usize>,
    pub b_sentences: Vec<usize>,
    pub a_texts: Vec<String>,
    pub b_texts: Vec<String>,
}

const PRONOUNS: &[&str] = &["he", "she", "it", "they", "his", "her", "its", "their", "this", "these", "there"];
const AUXILIARIES: &[&str] = &["do", "does", "did"];

struct Sentence {
    stems: Vec<String>,
    stem_set: HashSet<String>,
    cues: Vec<usize>,
    pronoun_start: bool,
}

impl Sentence {
    fn new(text: &str) -> Self {
        let toks = tokens(text);
        let stems: Vec<String> = toks.iter().map(|t| stem(t)).collect();
        let cues = toks.iter().enumerate().filter(|(_, t)| is_negation_cue(t)).map(|(i, _)| i).collect();
        let pronoun_start = toks.first().is_some_and(|t| PRONOUNS.contains(&t.as_str()));
        let stem_set = stems.iter().cloned().collect();
        Sentence { stems, stem_set, cues, pronoun_start }
    }

    fn contains_all(&self, stems: &[String]) -> bool {
        stems.iter().all(|s| self.stem_set.contains(s))
    }

    fn cue_between(&self, a: usize, b: usize) -> bool {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.cues.iter().any(|&c| lo < c && c < hi)
    }
}

/// Content stems of each surface form of an entity. A form whose words are
/// all stopwords keeps them, so it can still be matched.
fn entity_forms(term: &Term, aliases: &dyn SurfaceForms) -> Vec<Vec<String>> {
    let names = match term {
        Term::Id(id) => {
            let mut v = vec![aliases.entity_label(id)];
            v.extend(aliases.entity_aliases(id));
            v
        }
        Term::Text(s) => vec![s.clone()],
    };
    let mut seen = HashSet::new();
    names
        .iter()
        .map(|n| {
            let c = content_stems(n);
            if c.is_empty() {
                tokens(n).iter().map(|t| stem(t)).collect()
            } else {
                c
            }
        })
        .filter(|f: &Vec<String>| !f.is_empty() && seen.insert(f.clone()))
        .collect()
}

fn relation_stems(phrase: &str) -> Vec<String> {
    let cleaned = phrase.replace("{s}", " ").replace("{o}", " ");
    content_stems(&cleaned)
        .into_iter()
        .filter(|s| !is_negation_cue(s) && !AUXILIARIES.contains(&s.as_str()))
        .collect()
}

/// (positive forms, denial forms) of a relation.
fn relation_forms(fact: &Fact, aliases: &dyn SurfaceForms, registry: &RelationRegistry) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut positive = Vec::new();
    let mut denial = Vec::new();
    match &fact.relation {
        Term::Id(id) => {
            let rid = id.as_str().into();
            positive.extend(registry.surface_forms(&rid));
            if let Some(e) = registry.get(&rid) {
                denial.extend(e.negated.iter().cloned());
                denial.extend(e.negated_template.iter().cloned());
            }
            positive.push(aliases.relation_label(id));
            positive.extend(aliases.relation_aliases(id));
        }
        Term::Text(r) => positive.push(r.clone()),
    }
    let stems = |v: Vec<String>| v.iter().map(|p| relation_stems(p)).collect();
    (stems(positive), stems(denial))
}

/// Every token position where some form of the entity is anchored.
fn mentions(sentence: &Sentence, forms: &[Vec<String>]) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for form in forms {
        if sentence.contains_all(form) {
            out.extend(sentence.stems.iter().enumerate().filter(|(_, s)| **s == form[0]).map(|(i, _)| i));
        }
    }
    out.into_iter().collect()
}

struct Matcher<'a> {
    sentences: Vec<Sentence>,
    aliases: &'a dyn SurfaceForms,
    registry: &'a RelationRegistry,
    config: &'a CoverageConfig,
    /// Entity each sentence's leading pronoun refers to.
    antecedents: Vec<Option<Term>>,
}

impl<'a> Matcher<'a> {
    fn new(
        ctx: &VerbalizedContext,
        universe: &[&Fact],
        aliases: &'a dyn SurfaceForms,
        registry: &'a RelationRegistry,
        config: &'a CoverageConfig,
    ) -> Self {
        let sentences: Vec<Sentence> = ctx.sentences.iter().map(|s| Sentence::new(&s.text)).collect();
        let mut entities: Vec<&Term> = Vec::new();
        for f in universe {
            for t in [&f.subject, &f.object] {
                if !entities.contains(&t) {
                    entities.push(t);
                }
            }
        }
        let forms: Vec<Vec<Vec<String>>> = entities.iter().map(|t| entity_forms(t, aliases)).collect();
        let mut antecedents: Vec<Option<Term>> = vec![None; sentences.len()];
        let mut previous_first: Option<Term> = None;
        for (i, s) in sentences.iter().enumerate() {
            if config.anaphora && s.pronoun_start {
                antecedents[i] = previous_first.clone();
            }
            let first = entities
                .iter()
                .zip(&forms)
                .filter_map(|(t, f)| mentions(s, f).first().map(|&p| (p, *t)))
                .min_by_key(|(p, _)| *p)
                .map(|(_, t)| t.clone());
            previous_first = first.or_else(|| antecedents[i].clone());
        }
        Matcher { sentences, aliases, registry, config, antecedents }
    }

    fn covers(&self, fact: &Fact, i: usize) -> bool {
        let s = &self.sentences[i];
        let refers = |t: &Term| self.antecedents[i].as_ref() == Some(t);
        let subj = mentions(s, &entity_forms(&fact.subject, self.aliases));
        let obj = mentions(s, &entity_forms(&fact.object, self.aliases));
        let subj_ok = !subj.is_empty() || refers(&fact.subject);
        let obj_ok = !obj.is_empty() || refers(&fact.object);
        if !subj_ok || !obj_ok {
            return false;
        }
        let (positive, denial) = relation_forms(fact, self.aliases, self.registry);
        let matches = |forms: &[Vec<String>]| forms.iter().any(|f| s.contains_all(f));
        let has_cue = !s.cues.is_empty();
        let relation_ok = match self.config.relation_match {
            RelationMatch::Tokens if fact.negated => matches(&denial) || (has_cue && matches(&positive)),
            RelationMatch::Tokens => matches(&positive),
            RelationMatch::Polarity => true,
        };
        if !relation_ok {
            return false;
        }
        if fact.negated {
            return has_cue || matches(&denial);
        }
        // Positive facts need some pair of mentions without a denial
        // between them; a pronoun reference counts as the sentence start.
        let subj = if subj.is_empty() { vec![0] } else { subj };
        let obj = if obj.is_empty() { vec![0] } else { obj };
        subj.iter().any(|&a| obj.iter().any(|&b| !s.cue_between(a, b)))
    }

    fn covering(&self, fact: &Fact) -> Vec<usize> {
        (0..self.sentences.len()).filter(|&i| self.covers(fact, i)).collect()
    }
}

/// Check which conflict and subgraph facts a context carries.
pub fn coverage_check(
    conflict: &[Fact],
    subgraph: &[Fact],
    ctx: &VerbalizedContext,
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
    config: &CoverageConfig,
) -> CoverageReport {
    let universe: Vec<&Fact> = conflict.iter().chain(subgraph).collect();
    let matcher = Matcher::new(ctx, &universe, aliases, registry, config);
    let mut missing = Vec::new();
    let mut ratio = |facts: &[Fact]| {
        if ctx.is_empty() {
            missing.extend(facts.iter().cloned());
            return 0.0;
        }
        if facts.is_empty() {
            return 1.0;
        }
        let mut hit = 0usize;
        for f in facts {
            if matcher.covering(f).is_empty() {
                if !missing.contains(f) {
                    missing.push(f.clone());
                }
            } else {
                hit += 1;
            }
        }
        hit as f64 / facts.len() as f64
    };
    let conflict_ratio = ratio(conflict);
    let subgraph_ratio = ratio(subgraph);
    CoverageReport {
        conflict_covered: !ctx.is_empty() && conflict_ratio == 1.0,
        conflict_coverage_ratio: conflict_ratio,
        subgraph_coverage_ratio: subgraph_ratio,
        missing_triplets: missing,
        verifier_verdict: Verdict::Skipped,
    }
}

fn sentences_for(ctx: &VerbalizedContext, matcher: &Matcher, facts: &[Fact]) -> Vec<usize> {
    let mut out = BTreeSet::new();
    for f in facts {
        match ctx.mapped(f) {
            Some(idx) => out.extend(idx.iter().copied()),
            None => out.extend(matcher.covering(f)),
        }
    }
    out.into_iter().collect()
}

/// For each group, the sentences of A carrying its original facts and the
/// sentences of B carrying its replacement. Template contexts answer from
/// their sentence map; model text is matched like a coverage check.
pub fn locate_gold_sentences(
    a: &VerbalizedContext,
    b: &VerbalizedContext,
    groups: &[PerturbationGroup],
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
    config: &CoverageConfig,
) -> Result<Vec<GoldPair>, VerbalizeError> {
    if normalize(&a.text) == normalize(&b.text) {
        return Err(VerbalizeError::IdenticalContexts);
    }
    let originals: Vec<Vec<Fact>> =
        groups.iter().map(|g| g.original.iter().cloned().map(Fact::from).collect()).collect();
    let a_universe: Vec<&Fact> = originals.iter().flatten().collect();
    let b_universe: Vec<&Fact> = groups.iter().flat_map(|g| &g.replacement).collect();
    let ma = Matcher::new(a, &a_universe, aliases, registry, config);
    let mb = Matcher::new(b, &b_universe, aliases, registry, config);
    let mut out = Vec::with_capacity(groups.len());
    for (gi, g) in groups.iter().enumerate() {
        let a_sentences = sentences_for(a, &ma, &originals[gi]);
        if a_sentences.is_empty() {
            return Err(VerbalizeError::Unlocatable { group: gi, side: 'A' });
        }
        let b_sentences = sentences_for(b, &mb, &g.replacement);
        if b_sentences.is_empty() {
            return Err(VerbalizeError::Unlocatable { group: gi, side: 'B' });
        }
        let texts = |ctx: &VerbalizedContext, idx: &[usize]| idx.iter().map(|&i| ctx.sentences[i].text.clone()).collect();
        out.push(GoldPair {
            group: gi,
            a_texts: texts(a, &a_sentences),
            b_texts: texts(b, &b_sentences),
            a_sentences,
            b_sentences,
        });
    }
    Ok(out)
}
