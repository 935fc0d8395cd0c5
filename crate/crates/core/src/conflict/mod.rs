//! Conflict taxonomy, perturbation groups, and instance assembly.
//!
//! A perturbation group replaces one original subgraph triplet by either a
//! single contradicting fact (single-hop) or a chain of two or three facts
//! whose combination contradicts it (multi-hop). An instance bundles one to
//! four independent groups over the same subgraph.

mod bank;
mod fallback;
mod prompt;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::Subgraph;
use crate::fact::Fact;
use crate::kg::Triplet;

pub use bank::{DemoStatus, Demonstration, FewShotBank, DEMOS_PER_PROMPT};
pub use fallback::{
    generate_fallback_instance, generate_multi_hop_fallback, generate_single_hop_fallback, single_hop_options, substitution_pool, MultiHopPattern,
    SingleHopMode, DISTINCT_FROM,
};
pub use prompt::{
    build_generation_prompt, parse_triplet_output, resolve_surface_triples, GenerationMode, GenerationPrompt,
};

pub const MAX_CONFLICTS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConflictError {
    #[error("no perturbation groups")]
    NoGroups,
    #[error("{0} perturbation groups exceeds the maximum of 4")]
    TooManyGroups(usize),
    #[error("perturbation group {0} has an empty replacement list")]
    EmptyReplacement(usize),
    #[error("invalid perturbation group: {0}")]
    InvalidGroup(String),
    #[error("original triplet {triplet} of group {group} is not in the subgraph")]
    OriginalNotInSubgraph { group: usize, triplet: Triplet },
    #[error("groups {a} and {b} are not independent: {reason}")]
    Dependent { a: usize, b: usize, reason: String },
    #[error("no rule-based perturbation applies to {seed}: {reason}")]
    Infeasible { seed: Triplet, reason: String },
    #[error("no (Subject | Relation | Object) tuple found in model output: {raw:?}")]
    NoTuples { raw: String },
    #[error("generation prompt needs a non-empty subgraph")]
    EmptySubgraph,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HopClass {
    SingleHop,
    MultiHop,
}

/// One of the eight (hop class × conflict count) categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConflictType {
    pub hop: HopClass,
    pub n: u8,
}

impl ConflictType {
    pub fn new(hop: HopClass, n: usize) -> Option<Self> {
        (1..=MAX_CONFLICTS).contains(&n).then_some(ConflictType { hop, n: n as u8 })
    }

    /// All eight types, single-hop first, then by count.
    pub fn all() -> [ConflictType; 8] {
        let mut out = [ConflictType { hop: HopClass::SingleHop, n: 1 }; 8];
        for (i, hop) in [HopClass::SingleHop, HopClass::MultiHop].into_iter().enumerate() {
            for n in 1..=4u8 {
                out[i * 4 + n as usize - 1] = ConflictType { hop, n };
            }
        }
        out
    }

    /// Stable key such as `single_hop_2`.
    pub fn key(&self) -> String {
        let hop = match self.hop {
            HopClass::SingleHop => "single_hop",
            HopClass::MultiHop => "multi_hop",
        };
        format!("{hop}_{}", self.n)
    }
}

impl fmt::Display for ConflictType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hop = match self.hop {
            HopClass::SingleHop => "Single-Hop",
            HopClass::MultiHop => "Multi-Hop",
        };
        write!(f, "{hop}, {}", self.n)
    }
}

impl FromStr for ConflictType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConflictType::all()
            .into_iter()
            .find(|t| t.key() == s || t.to_string() == s)
            .ok_or_else(|| format!("unknown conflict type {s:?}"))
    }
}

/// Original subgraph triplets and the facts that replace them in the
/// conflicting context.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerturbationGroup {
    pub original: Vec<Triplet>,
    pub replacement: Vec<Fact>,
    pub hop: HopClass,
}

impl PerturbationGroup {
    /// A direct contradiction: changed object, negated relation, or a
    /// free-text relation from a model.
    pub fn single_hop(original: Triplet, replacement: Fact) -> Result<Self, ConflictError> {
        let orig = Fact::from(original.clone());
        if replacement == orig {
            return Err(ConflictError::InvalidGroup(format!("replacement equals the original {original}")));
        }
        let direct = replacement.negated || replacement.object != orig.object || replacement.relation.is_text();
        if !direct {
            return Err(ConflictError::InvalidGroup(format!(
                "single-hop replacement {replacement} neither changes the object nor negates the relation"
            )));
        }
        Ok(PerturbationGroup { original: vec![original], replacement: vec![replacement], hop: HopClass::SingleHop })
    }

    /// An indirect contradiction through a chain of 2 or 3 facts.
    pub fn multi_hop(original: Triplet, chain: Vec<Fact>) -> Result<Self, ConflictError> {
        if !(2..=3).contains(&chain.len()) {
            return Err(ConflictError::InvalidGroup(format!("multi-hop chain has {} facts, expected 2 or 3", chain.len())));
        }
        let orig = Fact::from(original.clone());
        if chain.contains(&orig) {
            return Err(ConflictError::InvalidGroup(format!("chain restates the original {original}")));
        }
        Ok(PerturbationGroup { original: vec![original], replacement: chain, hop: HopClass::MultiHop })
    }

    /// Classify parsed model output by its length.
    pub fn from_model(original: Triplet, replacement: Vec<Fact>) -> Result<Self, ConflictError> {
        match replacement.len() {
            0 => Err(ConflictError::EmptyReplacement(0)),
            1 => Self::single_hop(original, replacement.into_iter().next().expect("one fact")),
            _ => Self::multi_hop(original, replacement),
        }
    }

    /// Entity ids named by the replacement facts.
    pub fn replacement_entities(&self) -> BTreeSet<&str> {
        self.replacement.iter().flat_map(|f| f.entity_ids()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Rule,
    Model,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Generator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prompt_hashes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub few_shot_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_shot: bool,
}

impl Provenance {
    pub fn rule() -> Self {
        Provenance { generator: Generator::Rule, model_id: None, prompt_hashes: vec![], few_shot_ids: vec![], zero_shot: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictSpec {
    pub subgraph: Subgraph,
    pub groups: Vec<PerturbationGroup>,
    pub conflict_type: ConflictType,
    pub provenance: Provenance,
}

/// Conflict type of a group list: count of groups, multi-hop iff any group
/// replaces with two or more facts.
pub fn classify_conflict_pattern(groups: &[PerturbationGroup]) -> Result<ConflictType, ConflictError> {
    if groups.is_empty() {
        return Err(ConflictError::NoGroups);
    }
    if groups.len() > MAX_CONFLICTS {
        return Err(ConflictError::TooManyGroups(groups.len()));
    }
    if let Some(i) = groups.iter().position(|g| g.replacement.is_empty()) {
        return Err(ConflictError::EmptyReplacement(i));
    }
    let hop = if groups.iter().any(|g| g.replacement.len() >= 2) { HopClass::MultiHop } else { HopClass::SingleHop };
    Ok(ConflictType::new(hop, groups.len()).expect("count checked"))
}

/// Check independence and subgraph anchoring, then label the instance.
pub fn assemble_instance(
    subgraph: &Subgraph,
    groups: Vec<PerturbationGroup>,
    provenance: Provenance,
) -> Result<ConflictSpec, ConflictError> {
    let conflict_type = classify_conflict_pattern(&groups)?;
    let entities: BTreeSet<&str> = subgraph.entities().into_iter().map(|e| e.as_str()).collect();
    for (i, g) in groups.iter().enumerate() {
        if g.original.is_empty() {
            return Err(ConflictError::InvalidGroup(format!("group {i} has no original triplet")));
        }
        for t in &g.original {
            if !subgraph.contains(t) {
                return Err(ConflictError::OriginalNotInSubgraph { group: i, triplet: t.clone() });
            }
        }
        if g.hop == HopClass::MultiHop && g.replacement_entities().is_disjoint(&entities) {
            return Err(ConflictError::InvalidGroup(format!("group {i}: chain shares no entity with the subgraph")));
        }
    }
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            if let Some(reason) = dependency(&groups[a], &groups[b]) {
                return Err(ConflictError::Dependent { a, b, reason });
            }
        }
    }
    Ok(ConflictSpec { subgraph: subgraph.clone(), groups, conflict_type, provenance })
}

fn dependency(a: &PerturbationGroup, b: &PerturbationGroup) -> Option<String> {
    if let Some(t) = a.original.iter().find(|t| b.original.contains(t)) {
        return Some(format!("both perturb {t}"));
    }
    for x in &a.replacement {
        for y in &b.replacement {
            if x == y {
                return Some(format!("both introduce {x}"));
            }
            if x.opposes(y) {
                return Some(format!("{x} contradicts {y}"));
            }
        }
    }
    for (p, q) in [(a, b), (b, a)] {
        for f in &p.replacement {
            for t in &q.original {
                let orig = Fact::from(t.clone());
                if *f == orig || f.opposes(&orig) {
                    return Some(format!("{f} interacts with the other group's original {t}"));
                }
            }
        }
    }
    None
}
