use std::collections::BTreeSet;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Aliases, EntityId, KgError, KnowledgeGraph, RelationId};

type LabelTest = Box<dyn Fn(&str) -> bool>;

/// Predicate over entity labels marking symbol-like entities for removal.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "pattern")]
pub enum LabelPredicate {
    /// Labels without a single alphanumeric character (emoticons, symbols).
    NoAlphanumeric,
    Regex(String),
}

impl LabelPredicate {
    fn compile(&self) -> Result<LabelTest, KgError> {
        Ok(match self {
            LabelPredicate::NoAlphanumeric => Box::new(|label: &str| !label.chars().any(char::is_alphanumeric)),
            LabelPredicate::Regex(p) => {
                let re = Regex::new(p).map_err(|e| KgError::InvalidConfig(format!("label pattern: {e}")))?;
                Box::new(move |label: &str| re.is_match(label))
            }
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub entity_denylist: BTreeSet<EntityId>,
    /// Number of highest-degree entities to drop.
    pub top_degree_cutoff: usize,
    /// `None` keeps every relation.
    pub relation_whitelist: Option<BTreeSet<RelationId>>,
    pub denylist_pattern: Option<LabelPredicate>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            entity_denylist: BTreeSet::new(),
            top_degree_cutoff: 30,
            relation_whitelist: None,
            denylist_pattern: Some(LabelPredicate::NoAlphanumeric),
        }
    }
}

impl FilterConfig {
    /// A filter that removes nothing.
    pub fn identity() -> Self {
        FilterConfig { top_degree_cutoff: 0, denylist_pattern: None, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), KgError> {
        if matches!(&self.relation_whitelist, Some(w) if w.is_empty()) {
            return Err(KgError::InvalidConfig("relation whitelist is enabled but empty".into()));
        }
        if let Some(p) = &self.denylist_pattern {
            let _ = p.compile()?;
        }
        Ok(())
    }

    /// Read a denylist file: one entity id per line, `#` comments allowed.
    pub fn read_denylist(text: &str) -> BTreeSet<EntityId> {
        text.lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| EntityId(l.split('\t').next().unwrap_or(l).to_string()))
            .collect()
    }
}

/// Remove denylisted, symbol-like and top-degree entities (ranked on the
/// input graph, ties by id) and non-whitelisted relations. Surviving
/// entities are kept even if they lose every edge.
pub fn apply_filters(graph: &KnowledgeGraph, config: &FilterConfig) -> Result<KnowledgeGraph, KgError> {
    config.validate()?;
    let symbol = config.denylist_pattern.as_ref().map(|p| p.compile()).transpose()?;
    let mut removed = vec![false; graph.entity_count()];
    for (entity, _) in graph.degree_ranking().into_iter().take(config.top_degree_cutoff) {
        removed[graph.entity_index[&entity] as usize] = true;
    }
    for (i, entity) in graph.entity_table().iter().enumerate() {
        if config.entity_denylist.contains(entity) {
            removed[i] = true;
        } else if let Some(is_symbol) = &symbol {
            if is_symbol(graph.aliases().entities.label(&entity.0)) {
                removed[i] = true;
            }
        }
    }
    let keep_relation: Vec<bool> = graph
        .relation_table()
        .iter()
        .map(|r| config.relation_whitelist.as_ref().is_none_or(|w| w.contains(r)))
        .collect();

    // Re-intern over the survivors; old indices are monotone in the new ones.
    let mut entity_map = vec![u32::MAX; graph.entity_count()];
    let mut entities = Vec::new();
    for (i, e) in graph.entity_table().iter().enumerate() {
        if !removed[i] {
            entity_map[i] = entities.len() as u32;
            entities.push(e.clone());
        }
    }
    let kept_edges: Vec<_> = graph
        .raw_edges()
        .iter()
        .filter(|e| !removed[e.subject as usize] && !removed[e.object as usize] && keep_relation[e.relation as usize])
        .copied()
        .collect();
    let mut used_relation = vec![false; graph.relation_table().len()];
    for e in &kept_edges {
        used_relation[e.relation as usize] = true;
    }
    let mut relation_map = vec![u32::MAX; used_relation.len()];
    let mut relations = Vec::new();
    for (i, r) in graph.relation_table().iter().enumerate() {
        if used_relation[i] {
            relation_map[i] = relations.len() as u32;
            relations.push(r.clone());
        }
    }
    let edges = kept_edges
        .into_iter()
        .map(|e| super::Edge {
            subject: entity_map[e.subject as usize],
            relation: relation_map[e.relation as usize],
            object: entity_map[e.object as usize],
        })
        .collect();
    let aliases = Aliases {
        entities: graph.aliases().entities.retain(|id| {
            graph.entity_index.get(id).is_some_and(|&i| !removed[i as usize])
        }),
        relations: graph.aliases().relations.retain(|id| {
            graph.relation_index.get(id).is_some_and(|&i| used_relation[i as usize])
        }),
    };
    Ok(KnowledgeGraph::from_parts(entities, relations, edges, aliases))
}
