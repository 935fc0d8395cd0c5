use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::text::normalize;

/// Display label and searchable aliases of one entity or relation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub id: String,
    /// The first alias; falls back to the id when the alias list is empty.
    pub canonical_label: String,
    /// Deduplicated, in file order, canonical label first.
    pub aliases: Vec<String>,
}

impl AliasEntry {
    pub fn new(id: impl Into<String>, aliases: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let id = id.into();
        let mut seen = std::collections::HashSet::new();
        let aliases: Vec<String> = aliases
            .into_iter()
            .map(Into::into)
            .map(|a: String| a.trim().to_string())
            .filter(|a| !a.is_empty() && seen.insert(a.clone()))
            .collect();
        let canonical_label = aliases.first().cloned().unwrap_or_else(|| id.clone());
        AliasEntry { id, canonical_label, aliases }
    }
}

/// Id → aliases, with a reverse index from normalized surface form to ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AliasTable {
    entries: BTreeMap<String, AliasEntry>,
    reverse: HashMap<String, Vec<String>>,
}

impl AliasTable {
    pub fn insert(&mut self, entry: AliasEntry) {
        if let Some(old) = self.entries.remove(&entry.id) {
            // Merge repeated ids instead of dropping aliases.
            let merged = AliasEntry::new(entry.id.clone(), old.aliases.into_iter().chain(entry.aliases));
            self.index(&merged);
            self.entries.insert(merged.id.clone(), merged);
            return;
        }
        self.index(&entry);
        self.entries.insert(entry.id.clone(), entry);
    }

    fn index(&mut self, entry: &AliasEntry) {
        for alias in &entry.aliases {
            let ids = self.reverse.entry(normalize(alias)).or_default();
            if !ids.contains(&entry.id) {
                ids.push(entry.id.clone());
                ids.sort();
            }
        }
    }

    pub fn get(&self, id: &str) -> Option<&AliasEntry> {
        self.entries.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn label<'a>(&'a self, id: &'a str) -> &'a str {
        self.entries.get(id).map(|e| e.canonical_label.as_str()).unwrap_or(id)
    }

    /// Ids whose alias normalizes to the same string as `surface`.
    pub fn lookup(&self, surface: &str) -> &[String] {
        self.reverse.get(&normalize(surface)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AliasEntry> {
        self.entries.values()
    }

    /// Keep only entries whose id satisfies `keep`.
    pub fn retain(&self, mut keep: impl FnMut(&str) -> bool) -> AliasTable {
        let mut out = AliasTable::default();
        for e in self.entries.values().filter(|e| keep(&e.id)) {
            out.insert(e.clone());
        }
        out
    }
}

/// Entity and relation alias tables of a graph.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Aliases {
    pub entities: AliasTable,
    pub relations: AliasTable,
}

/// Surface forms used when rendering or searching for graph items in text.
pub trait SurfaceForms {
    fn entity_label(&self, id: &str) -> String;
    fn entity_aliases(&self, id: &str) -> Vec<String>;
    fn relation_label(&self, id: &str) -> String;
    fn relation_aliases(&self, id: &str) -> Vec<String>;
    fn resolve_entity(&self, surface: &str) -> Option<String>;
    fn resolve_relation(&self, surface: &str) -> Option<String>;
}

impl SurfaceForms for Aliases {
    fn entity_label(&self, id: &str) -> String {
        self.entities.label(id).to_string()
    }

    fn entity_aliases(&self, id: &str) -> Vec<String> {
        self.entities.get(id).map(|e| e.aliases.clone()).unwrap_or_default()
    }

    fn relation_label(&self, id: &str) -> String {
        self.relations.label(id).to_string()
    }

    fn relation_aliases(&self, id: &str) -> Vec<String> {
        self.relations.get(id).map(|e| e.aliases.clone()).unwrap_or_default()
    }

    fn resolve_entity(&self, surface: &str) -> Option<String> {
        unique(self.entities.lookup(surface))
    }

    fn resolve_relation(&self, surface: &str) -> Option<String> {
        unique(self.relations.lookup(surface))
    }
}

// Ambiguous surface forms stay unresolved.
fn unique(ids: &[String]) -> Option<String> {
    match ids {
        [only] => Some(only.clone()),
        _ => None,
    }
}
