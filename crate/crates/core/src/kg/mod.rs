//! Triplet knowledge graph: ingestion, filtering and adjacency indexing.
//!
//! Entities and relations are interned into dense ids in lexicographic order
//! so that index order and string order agree. The graph is immutable once
//! built; filtering produces a new graph.

mod alias;
pub mod cache;
mod filter;
mod load;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alias::{AliasEntry, AliasTable, Aliases, SurfaceForms};
pub use filter::{apply_filters, FilterConfig, LabelPredicate};
pub use load::{load_graph, write_triplets, LoadReport};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("failed to read {source_name}: {error}")]
    Io {
        source_name: &'static str,
        #[source]
        error: std::io::Error,
    },
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error("graph cache: {0}")]
    Cache(String),
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_id!(EntityId);
string_id!(RelationId);

/// An identifier-level fact.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triplet {
    pub fn new(subject: impl Into<String>, relation: impl Into<String>, object: impl Into<String>) -> Self {
        Triplet {
            subject: EntityId(subject.into()),
            relation: RelationId(relation.into()),
            object: EntityId(object.into()),
        }
    }

    pub fn is_incident(&self, entity: &EntityId) -> bool {
        &self.subject == entity || &self.object == entity
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({} | {} | {})", self.subject, self.relation, self.object)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct Edge {
    pub subject: u32,
    pub relation: u32,
    pub object: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Immutable, indexed triplet graph.
#[derive(Clone, Debug)]
pub struct KnowledgeGraph {
    entities: Vec<EntityId>,
    entity_index: HashMap<EntityId, u32>,
    relations: Vec<RelationId>,
    relation_index: HashMap<RelationId, u32>,
    edges: Vec<Edge>,
    out_index: Vec<Vec<EdgeId>>,
    in_index: Vec<Vec<EdgeId>>,
    aliases: Aliases,
}

/// Collects raw triplets and entities, then interns and indexes them.
#[derive(Default)]
pub struct GraphBuilder {
    triplets: Vec<Triplet>,
    isolated: Vec<EntityId>,
    aliases: Aliases,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn triplet(mut self, t: Triplet) -> Self {
        self.triplets.push(t);
        self
    }

    pub fn push(&mut self, t: Triplet) {
        self.triplets.push(t);
    }

    /// Register an entity that may have no incident edges.
    pub fn entity(mut self, id: impl Into<String>) -> Self {
        self.isolated.push(EntityId(id.into()));
        self
    }

    pub fn add_entity(&mut self, id: EntityId) {
        self.isolated.push(id);
    }

    pub fn aliases(mut self, aliases: Aliases) -> Self {
        self.aliases = aliases;
        self
    }

    pub fn set_aliases(&mut self, aliases: Aliases) {
        self.aliases = aliases;
    }

    /// Intern, drop self-loops and duplicates, and index. Returns the graph
    /// and the number of (self-loops, duplicates) dropped.
    pub fn build_counting(self) -> (KnowledgeGraph, usize, usize) {
        let mut self_loops = 0;
        let mut triplets: Vec<Triplet> = Vec::with_capacity(self.triplets.len());
        for t in self.triplets {
            if t.subject == t.object {
                self_loops += 1;
            } else {
                triplets.push(t);
            }
        }
        let mut entities: Vec<EntityId> = triplets
            .iter()
            .flat_map(|t| [t.subject.clone(), t.object.clone()])
            .chain(self.isolated)
            .collect();
        entities.sort();
        entities.dedup();
        let mut relations: Vec<RelationId> = triplets.iter().map(|t| t.relation.clone()).collect();
        relations.sort();
        relations.dedup();
        let entity_index: HashMap<EntityId, u32> =
            entities.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
        let relation_index: HashMap<RelationId, u32> =
            relations.iter().enumerate().map(|(i, r)| (r.clone(), i as u32)).collect();
        let mut edges: Vec<Edge> = triplets
            .iter()
            .map(|t| Edge {
                subject: entity_index[&t.subject],
                relation: relation_index[&t.relation],
                object: entity_index[&t.object],
            })
            .collect();
        let before = edges.len();
        edges.sort();
        edges.dedup();
        let duplicates = before - edges.len();
        let graph = KnowledgeGraph::from_parts(entities, relations, edges, self.aliases);
        (graph, self_loops, duplicates)
    }

    pub fn build(self) -> KnowledgeGraph {
        self.build_counting().0
    }
}

impl KnowledgeGraph {
    /// `edges` must be sorted and deduplicated, indices valid for the tables.
    pub(crate) fn from_parts(entities: Vec<EntityId>, relations: Vec<RelationId>, edges: Vec<Edge>, aliases: Aliases) -> Self {
        let entity_index = entities.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
        let relation_index = relations.iter().enumerate().map(|(i, r)| (r.clone(), i as u32)).collect();
        let mut out_index = vec![Vec::new(); entities.len()];
        let mut in_index = vec![Vec::new(); entities.len()];
        for (i, e) in edges.iter().enumerate() {
            out_index[e.subject as usize].push(EdgeId(i as u32));
            in_index[e.object as usize].push(EdgeId(i as u32));
        }
        // Edges are sorted by (subject, relation, object), so out lists are
        // already in (relation, object) order; in lists need a sort.
        for list in &mut in_index {
            list.sort_by_key(|id| {
                let e = edges[id.0 as usize];
                (e.relation, e.subject)
            });
        }
        KnowledgeGraph { entities, entity_index, relations, relation_index, edges, out_index, in_index, aliases }
    }

    pub fn empty() -> Self {
        GraphBuilder::new().build()
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn triplet_count(&self) -> usize {
        self.edges.len()
    }

    pub fn aliases(&self) -> &Aliases {
        &self.aliases
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityId> {
        self.entities.iter()
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationId> {
        self.relations.iter()
    }

    pub fn contains_entity(&self, id: &EntityId) -> bool {
        self.entity_index.contains_key(id)
    }

    pub fn node(&self, id: &EntityId) -> Option<NodeId> {
        self.entity_index.get(id).map(|&i| NodeId(i))
    }

    pub fn entity(&self, node: NodeId) -> &EntityId {
        &self.entities[node.0 as usize]
    }

    pub fn relation_of(&self, edge: EdgeId) -> &RelationId {
        &self.relations[self.edges[edge.0 as usize].relation as usize]
    }

    pub fn endpoints(&self, edge: EdgeId) -> (NodeId, NodeId) {
        let e = self.edges[edge.0 as usize];
        (NodeId(e.subject), NodeId(e.object))
    }

    pub fn triplet(&self, edge: EdgeId) -> Triplet {
        let e = self.edges[edge.0 as usize];
        Triplet {
            subject: self.entities[e.subject as usize].clone(),
            relation: self.relations[e.relation as usize].clone(),
            object: self.entities[e.object as usize].clone(),
        }
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> + '_ {
        (0..self.edges.len() as u32).map(EdgeId)
    }

    pub fn triplets(&self) -> impl Iterator<Item = Triplet> + '_ {
        self.edge_ids().map(|e| self.triplet(e))
    }

    pub fn find_edge(&self, t: &Triplet) -> Option<EdgeId> {
        let key = Edge {
            subject: *self.entity_index.get(&t.subject)?,
            relation: *self.relation_index.get(&t.relation)?,
            object: *self.entity_index.get(&t.object)?,
        };
        self.edges.binary_search(&key).ok().map(|i| EdgeId(i as u32))
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.find_edge(t).is_some()
    }

    pub fn out_edges(&self, node: NodeId) -> &[EdgeId] {
        &self.out_index[node.0 as usize]
    }

    pub fn in_edges(&self, node: NodeId) -> &[EdgeId] {
        &self.in_index[node.0 as usize]
    }

    /// Out- then in-edges of `node`.
    pub fn incident_edges(&self, node: NodeId) -> impl Iterator<Item = EdgeId> + '_ {
        self.out_edges(node).iter().chain(self.in_edges(node)).copied()
    }

    pub fn degree_of(&self, node: NodeId) -> usize {
        self.out_index[node.0 as usize].len() + self.in_index[node.0 as usize].len()
    }

    pub fn degree(&self, id: &EntityId) -> Option<usize> {
        self.node(id).map(|n| self.degree_of(n))
    }

    /// Entities ordered by descending degree, ties by ascending id.
    pub fn degree_ranking(&self) -> Vec<(EntityId, usize)> {
        let mut ranked: Vec<(EntityId, usize)> =
            (0..self.entities.len() as u32).map(|i| (self.entities[i as usize].clone(), self.degree_of(NodeId(i)))).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked
    }

    /// Triplets incident to `entity`, ordered by relation id then
    /// counterpart id (outgoing before incoming on ties).
    pub fn neighbors(&self, entity: &EntityId, direction: Direction) -> Result<Vec<Triplet>, KgError> {
        let node = self.node(entity).ok_or_else(|| KgError::UnknownEntity(entity.0.clone()))?;
        let mut keyed: Vec<((&RelationId, &EntityId, u8), EdgeId)> = Vec::new();
        if matches!(direction, Direction::Out | Direction::Both) {
            for &e in self.out_edges(node) {
                let edge = self.edges[e.0 as usize];
                keyed.push(((&self.relations[edge.relation as usize], &self.entities[edge.object as usize], 0), e));
            }
        }
        if matches!(direction, Direction::In | Direction::Both) {
            for &e in self.in_edges(node) {
                let edge = self.edges[e.0 as usize];
                keyed.push(((&self.relations[edge.relation as usize], &self.entities[edge.subject as usize], 1), e));
            }
        }
        keyed.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(keyed.into_iter().map(|(_, e)| self.triplet(e)).collect())
    }

    pub(crate) fn raw_edges(&self) -> &[Edge] {
        &self.edges
    }

    pub(crate) fn entity_table(&self) -> &[EntityId] {
        &self.entities
    }

    pub(crate) fn relation_table(&self) -> &[RelationId] {
        &self.relations
    }
}
