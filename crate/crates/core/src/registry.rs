//! Whitelisted relations, their semantic domains, and the phrases used to
//! verbalize and question them.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::RelationId;
use crate::text::{capitalize, normalize};

const DEFAULT_REGISTRY: &str = include_str!("../assets/relations.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Domain {
    Human,
    Geography,
    Organization,
    CreativeWork,
    ClassConcept,
    CauseEffect,
    General,
}

impl Domain {
    pub const ALL: [Domain; 7] = [
        Domain::Human,
        Domain::Geography,
        Domain::Organization,
        Domain::CreativeWork,
        Domain::ClassConcept,
        Domain::CauseEffect,
        Domain::General,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Human => "Human",
            Domain::Geography => "Geography",
            Domain::Organization => "Organization",
            Domain::CreativeWork => "CreativeWork",
            Domain::ClassConcept => "ClassConcept",
            Domain::CauseEffect => "CauseEffect",
            Domain::General => "General",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str().to_lowercase() == key)
            .ok_or_else(|| format!("unknown domain {s:?}"))
    }
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("failed to read registry {path}: {error}")]
    Io { path: String, error: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub id: RelationId,
    pub label: String,
    pub domain: Domain,
    /// Declarative clause with `{s}` and `{o}` placeholders.
    pub phrase: String,
    /// Yes/no question with `{s}` and `{o}` placeholders.
    pub question: String,
    /// Relation phrase placed between subject and object to deny the fact.
    pub negated: Option<String>,
    /// Sentence template for the denial when the bare phrase reads badly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negated_template: Option<String>,
}

impl RelationEntry {
    pub fn render(&self, subject: &str, object: &str) -> String {
        capitalize(&self.clause(subject, object))
    }

    pub fn render_negated(&self, subject: &str, object: &str) -> Option<String> {
        self.negated_clause(subject, object).map(|c| capitalize(&c))
    }

    /// The filled phrase without sentence capitalization.
    pub fn clause(&self, subject: &str, object: &str) -> String {
        fill(&self.phrase, subject, object)
    }

    pub fn negated_clause(&self, subject: &str, object: &str) -> Option<String> {
        match (&self.negated, &self.negated_template) {
            (_, Some(t)) => Some(fill(t, subject, object)),
            (Some(n), None) => Some(format!("{subject} {n} {object}")),
            (None, None) => None,
        }
    }

    pub fn question(&self, subject: &str, object: &str) -> String {
        capitalize(&fill(&self.question, subject, object))
    }

    /// The phrase with placeholders removed, e.g. "is the father of".
    pub fn bare_phrase(&self) -> String {
        self.phrase.replace("{s}", " ").replace("{o}", " ").split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn fill(template: &str, subject: &str, object: &str) -> String {
    // Single pass so that labels containing "{o}" are not re-substituted.
    let mut out = String::with_capacity(template.len() + subject.len() + object.len());
    let mut rest = template;
    while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(t) = tail.strip_prefix("{s}") {
            out.push_str(subject);
            rest = t;
        } else if let Some(t) = tail.strip_prefix("{o}") {
            out.push_str(object);
            rest = t;
        } else {
            out.push('{');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    out
}

/// The relation whitelist with verbalization data, in file order.
#[derive(Clone, Debug)]
pub struct RelationRegistry {
    entries: Vec<RelationEntry>,
    index: HashMap<RelationId, usize>,
    /// Normalized surface form → (relation, negated).
    surfaces: HashMap<String, Vec<(RelationId, bool)>>,
}

impl Default for RelationRegistry {
    fn default() -> Self {
        RelationRegistry::parse(DEFAULT_REGISTRY).expect("bundled registry is valid")
    }
}

impl RelationRegistry {
    /// Parse the tab-separated registry format. Blank lines and lines
    /// starting with `#` are skipped; `-` or an empty sixth column means no
    /// negated phrase. The sixth column may append `|` and a sentence
    /// template used instead of "{s} <negated phrase> {o}".
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| RegistryError::Parse { line, message };
            if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = raw.trim_end_matches('\r').split('\t').map(str::trim).collect();
            if !(5..=6).contains(&cols.len()) {
                return Err(err(format!("expected 5 or 6 tab-separated columns, found {}", cols.len())));
            }
            let id = RelationId::from(cols[0]);
            if cols[0].is_empty() || index.contains_key(&id) {
                return Err(err(format!("missing or duplicate relation id {:?}", cols[0])));
            }
            let domain = Domain::from_str(cols[2]).map_err(err)?;
            for (name, template) in [("phrase", cols[3]), ("question", cols[4])] {
                if !template.contains("{s}") || !template.contains("{o}") {
                    return Err(err(format!("{name} must contain both {{s}} and {{o}}")));
                }
            }
            let (negated, negated_template) = match cols.get(5).filter(|n| !n.is_empty() && **n != "-") {
                None => (None, None),
                Some(n) => match n.split_once('|') {
                    Some((bare, template)) => {
                        if !template.contains("{s}") || !template.contains("{o}") {
                            return Err(err("negated template must contain both {s} and {o}".into()));
                        }
                        (Some(bare.trim().to_string()), Some(template.trim().to_string()))
                    }
                    None => (Some(n.to_string()), None),
                },
            };
            index.insert(id.clone(), entries.len());
            entries.push(RelationEntry {
                id,
                label: cols[1].to_string(),
                domain,
                phrase: cols[3].to_string(),
                question: cols[4].to_string(),
                negated,
                negated_template,
            });
        }
        let mut registry = RelationRegistry { entries, index, surfaces: HashMap::new() };
        registry.index_surfaces();
        Ok(registry)
    }

    pub fn from_path(path: &Path) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|error| RegistryError::Io { path: path.display().to_string(), error })?;
        Self::parse(&text)
    }

    fn index_surfaces(&mut self) {
        let mut surfaces: HashMap<String, Vec<(RelationId, bool)>> = HashMap::new();
        for e in &self.entries {
            let mut add = |s: &str, neg: bool| {
                let list = surfaces.entry(normalize(s)).or_default();
                if !list.contains(&(e.id.clone(), neg)) {
                    list.push((e.id.clone(), neg));
                }
            };
            add(e.id.as_str(), false);
            add(&e.label, false);
            add(&e.bare_phrase(), false);
            if let Some(n) = &e.negated {
                add(n, true);
            }
            add(&format!("not {}", e.label), true);
        }
        self.surfaces = surfaces;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &RelationId) -> Option<&RelationEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: &RelationId) -> bool {
        self.index.contains_key(id)
    }

    pub fn domain_of(&self, id: &RelationId) -> Option<Domain> {
        self.get(id).map(|e| e.domain)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationEntry> {
        self.entries.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &RelationId> {
        self.entries.iter().map(|e| &e.id)
    }

    /// Resolve a relation surface (id, label, phrase or negated phrase).
    /// Ambiguous surfaces resolve only if every candidate agrees.
    pub fn resolve_surface(&self, surface: &str) -> Option<(RelationId, bool)> {
        match self.surfaces.get(&normalize(surface))?.as_slice() {
            [only] => Some(only.clone()),
            [first, rest @ ..] if rest.iter().all(|c| c.1 == first.1) => {
                // Same-polarity homonyms like the two "contains" relations:
                // the first in file order wins.
                Some(first.clone())
            }
            _ => None,
        }
    }

    /// Text forms under which the relation may appear in prose.
    pub fn surface_forms(&self, id: &RelationId) -> Vec<String> {
        self.get(id).map(|e| vec![e.label.clone(), e.bare_phrase()]).unwrap_or_default()
    }
}
