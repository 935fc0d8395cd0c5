//! Facts that may leave the identifier space: generated conflicts can name
//! entities or relations that the graph does not contain.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kg::{SurfaceForms, Triplet};
use crate::registry::RelationRegistry;

/// A graph identifier or a free-text surface form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Id(String),
    Text(String),
}

impl Term {
    pub fn id(s: impl Into<String>) -> Self {
        Term::Id(s.into())
    }

    pub fn text(s: impl Into<String>) -> Self {
        Term::Text(s.into())
    }

    pub fn as_id(&self) -> Option<&str> {
        match self {
            Term::Id(s) => Some(s),
            Term::Text(_) => None,
        }
    }

    pub fn raw(&self) -> &str {
        match self {
            Term::Id(s) | Term::Text(s) => s,
        }
    }

    pub fn is_text(&self) -> bool {
        matches!(self, Term::Text(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.raw())
    }
}

/// A (possibly negated) subject-relation-object statement.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub subject: Term,
    pub relation: Term,
    pub object: Term,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub negated: bool,
}

impl Fact {
    pub fn new(subject: Term, relation: Term, object: Term) -> Self {
        Fact { subject, relation, object, negated: false }
    }

    pub fn negation_of(t: &Triplet) -> Self {
        Fact { negated: true, ..Fact::from(t.clone()) }
    }

    /// The identifier triplet, if every position is an id and the fact is positive.
    pub fn as_triplet(&self) -> Option<Triplet> {
        if self.negated {
            return None;
        }
        Some(Triplet::new(self.subject.as_id()?, self.relation.as_id()?, self.object.as_id()?))
    }

    /// Same statement with opposite polarity.
    pub fn opposes(&self, other: &Fact) -> bool {
        self.subject == other.subject && self.relation == other.relation && self.object == other.object && self.negated != other.negated
    }

    pub fn mentions(&self, entity: &str) -> bool {
        self.subject.as_id() == Some(entity) || self.object.as_id() == Some(entity)
    }

    /// Entity ids named by the fact.
    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        [self.subject.as_id(), self.object.as_id()].into_iter().flatten()
    }

    /// Human-readable `(subject | relation | object)` with labels resolved.
    pub fn surface(&self, aliases: &dyn SurfaceForms, registry: &RelationRegistry) -> SurfaceTriple {
        let entity = |t: &Term| match t {
            Term::Id(id) => aliases.entity_label(id),
            Term::Text(s) => s.clone(),
        };
        let relation = match &self.relation {
            Term::Id(id) => {
                let entry = registry.get(&id.as_str().into());
                match (self.negated, entry) {
                    (true, Some(e)) => e.negated.clone().unwrap_or_else(|| format!("not {}", e.label)),
                    (true, None) => format!("not {}", aliases.relation_label(id)),
                    (false, Some(e)) => e.label.clone(),
                    (false, None) => aliases.relation_label(id),
                }
            }
            Term::Text(s) if self.negated => format!("not {s}"),
            Term::Text(s) => s.clone(),
        };
        SurfaceTriple { subject: entity(&self.subject), relation, object: entity(&self.object) }
    }
}

impl From<Triplet> for Fact {
    fn from(t: Triplet) -> Self {
        Fact::new(Term::Id(t.subject.0), Term::Id(t.relation.0), Term::Id(t.object.0))
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let neg = if self.negated { "not " } else { "" };
        write!(f, "({} | {neg}{} | {})", self.subject, self.relation, self.object)
    }
}

/// A triple of surface strings, as written in prompts and demonstrations.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurfaceTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl SurfaceTriple {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        SurfaceTriple { subject: subject.into(), relation: relation.into(), object: object.into() }
    }
}

impl fmt::Display for SurfaceTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} | {} | {})", self.subject, self.relation, self.object)
    }
}
