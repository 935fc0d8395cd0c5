//! Seed sampling and bounded depth-first subgraph growth.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{EdgeId, EntityId, KnowledgeGraph, NodeId, Triplet};
use crate::registry::{Domain, RelationRegistry};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no triplet in the graph uses a whitelisted relation ({whitelist})")]
    NoEligibleSeed { whitelist: String },
    #[error("seed {0} is not in the graph")]
    SeedNotInGraph(Triplet),
    #[error("invalid extraction config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    pub max_edges: usize,
    pub max_edges_per_node: usize,
    /// Inclusive range the per-run DFS depth limit is drawn from.
    pub depth_range: [usize; 2],
    pub rng_seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig { max_edges: 15, max_edges_per_node: 5, depth_range: [2, 5], rng_seed: 0 }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<(), ExtractError> {
        let mut problems = Vec::new();
        if self.max_edges < 1 {
            problems.push("max_edges must be at least 1");
        }
        if self.max_edges_per_node < 1 {
            problems.push("max_edges_per_node must be at least 1");
        }
        if self.depth_range[0] < 1 {
            problems.push("depth_range lower bound must be at least 1");
        }
        if self.depth_range[0] > self.depth_range[1] {
            problems.push("depth_range is empty");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ExtractError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// The rng stream of task `index` under `seed`.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub seed: Triplet,
    /// Discovery order; the seed comes first.
    pub edges: Vec<Triplet>,
    pub per_node_edge_count: BTreeMap<EntityId, usize>,
    pub depth_used: usize,
    pub domains: BTreeSet<Domain>,
}

impl Subgraph {
    /// Build from an explicit edge list, deriving counts and domains.
    pub fn from_edges(seed: Triplet, edges: Vec<Triplet>, depth_used: usize, registry: &RelationRegistry) -> Self {
        let mut per_node_edge_count = BTreeMap::new();
        for t in &edges {
            *per_node_edge_count.entry(t.subject.clone()).or_insert(0) += 1;
            *per_node_edge_count.entry(t.object.clone()).or_insert(0) += 1;
        }
        let domains = edges.iter().filter_map(|t| registry.domain_of(&t.relation)).collect();
        Subgraph { seed, edges, per_node_edge_count, depth_used, domains }
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.edges.contains(t)
    }

    pub fn entities(&self) -> BTreeSet<&EntityId> {
        self.edges.iter().flat_map(|t| [&t.subject, &t.object]).collect()
    }
}

/// Uniform sampler over triplets whose relation is in the registry.
pub struct SeedSampler<'g> {
    graph: &'g KnowledgeGraph,
    eligible: Vec<EdgeId>,
}

impl<'g> SeedSampler<'g> {
    pub fn new(graph: &'g KnowledgeGraph, registry: &RelationRegistry) -> Result<Self, ExtractError> {
        let eligible: Vec<EdgeId> = graph.edge_ids().filter(|&e| registry.contains(graph.relation_of(e))).collect();
        if eligible.is_empty() {
            let mut ids: Vec<&str> = registry.ids().map(|r| r.as_str()).collect();
            if ids.len() > 8 {
                let more = format!("... {} relations in total", ids.len());
                ids.truncate(8);
                return Err(ExtractError::NoEligibleSeed { whitelist: format!("{} {more}", ids.join(", ")) });
            }
            return Err(ExtractError::NoEligibleSeed { whitelist: ids.join(", ") });
        }
        Ok(SeedSampler { graph, eligible })
    }

    pub fn eligible_count(&self) -> usize {
        self.eligible.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Triplet {
        self.graph.triplet(self.eligible[rng.random_range(0..self.eligible.len())])
    }
}

pub fn sample_seed<R: Rng + ?Sized>(graph: &KnowledgeGraph, registry: &RelationRegistry, rng: &mut R) -> Result<Triplet, ExtractError> {
    Ok(SeedSampler::new(graph, registry)?.sample(rng))
}

struct Dfs<'a, R: Rng + ?Sized> {
    graph: &'a KnowledgeGraph,
    config: &'a ExtractionConfig,
    rng: &'a mut R,
    depth_limit: usize,
    taken: HashSet<EdgeId>,
    order: Vec<EdgeId>,
    counts: HashMap<NodeId, usize>,
    depth: HashMap<NodeId, usize>,
}

impl<R: Rng + ?Sized> Dfs<'_, R> {
    fn full(&self) -> bool {
        self.order.len() >= self.config.max_edges
    }

    fn count(&self, n: NodeId) -> usize {
        self.counts.get(&n).copied().unwrap_or(0)
    }

    fn take(&mut self, e: EdgeId) {
        let (s, o) = self.graph.endpoints(e);
        self.taken.insert(e);
        self.order.push(e);
        *self.counts.entry(s).or_insert(0) += 1;
        *self.counts.entry(o).or_insert(0) += 1;
    }

    fn enter(&mut self, node: NodeId, depth: usize) {
        self.depth.insert(node, depth);
        self.expand(node, depth);
    }

    fn expand(&mut self, node: NodeId, depth: usize) {
        if depth >= self.depth_limit {
            return;
        }
        let mut incident: Vec<EdgeId> = self.graph.incident_edges(node).collect();
        incident.shuffle(self.rng);
        for e in incident {
            if self.full() || self.count(node) >= self.config.max_edges_per_node {
                return;
            }
            if self.taken.contains(&e) {
                continue;
            }
            let (s, o) = self.graph.endpoints(e);
            let other = if s == node { o } else { s };
            if self.count(other) >= self.config.max_edges_per_node {
                continue;
            }
            self.take(e);
            if !self.depth.contains_key(&other) {
                self.enter(other, depth + 1);
            }
        }
    }
}

/// Grow a subgraph around `seed` by randomized DFS from its subject.
///
/// The seed edge is always kept and traversed first. Both edge directions
/// are followed. A node at depth `d` expands only while `d` is below the
/// drawn depth limit, and no edge is added that would push either endpoint
/// past `max_edges_per_node`.
pub fn extract<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    registry: &RelationRegistry,
    seed: &Triplet,
    config: &ExtractionConfig,
    rng: &mut R,
) -> Result<Subgraph, ExtractError> {
    config.validate()?;
    let seed_edge = graph.find_edge(seed).ok_or_else(|| ExtractError::SeedNotInGraph(seed.clone()))?;
    let depth_limit = rng.random_range(config.depth_range[0]..=config.depth_range[1]);
    let (subject, object) = graph.endpoints(seed_edge);
    let mut dfs = Dfs {
        graph,
        config,
        rng,
        depth_limit,
        taken: HashSet::new(),
        order: Vec::new(),
        counts: HashMap::new(),
        depth: HashMap::new(),
    };
    dfs.take(seed_edge);
    dfs.depth.insert(subject, 0);
    dfs.enter(object, 1);
    dfs.expand(subject, 0);
    let edges = dfs.order.iter().map(|&e| graph.triplet(e)).collect();
    Ok(Subgraph::from_edges(seed.clone(), edges, depth_limit, registry))
}

/// Sample and extract `count` subgraphs in parallel; task `i` uses
/// [`task_rng`]`(config.rng_seed, i)`.
pub fn extract_many(
    graph: &KnowledgeGraph,
    registry: &RelationRegistry,
    config: &ExtractionConfig,
    count: usize,
) -> Result<Vec<Subgraph>, ExtractError> {
    config.validate()?;
    let sampler = SeedSampler::new(graph, registry)?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = task_rng(config.rng_seed, i);
            let seed = sampler.sample(&mut rng);
            extract(graph, registry, &seed, config, &mut rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    MaxEdges { count: usize, max: usize },
    PerNode { entity: EntityId, count: usize, max: usize },
    SeedMissing,
    Duplicate { triplet: Triplet },
    Disconnected { triplet: Triplet },
    Depth { triplet: Triplet, depth_used: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MaxEdges { count, max } => write!(f, "max_edges: {count} edges exceeds {max}"),
            Violation::PerNode { entity, count, max } => write!(f, "max_edges_per_node: {entity} has {count} edges, limit {max}"),
            Violation::SeedMissing => write!(f, "connectivity: seed triplet missing from edges"),
            Violation::Duplicate { triplet } => write!(f, "duplicate edge {triplet}"),
            Violation::Disconnected { triplet } => write!(f, "connectivity: {triplet} not connected to the seed subject"),
            Violation::Depth { triplet, depth_used } => write!(f, "depth: {triplet} lies beyond depth {depth_used}"),
        }
    }
}

/// Check a subgraph against the structural constraints, recomputing every
/// count from the edge list.
pub fn validate_constraints(subgraph: &Subgraph, config: &ExtractionConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let edges = &subgraph.edges;
    if edges.len() > config.max_edges {
        out.push(Violation::MaxEdges { count: edges.len(), max: config.max_edges });
    }
    let mut counts: BTreeMap<&EntityId, usize> = BTreeMap::new();
    let mut seen = HashSet::new();
    for t in edges {
        if !seen.insert(t) {
            out.push(Violation::Duplicate { triplet: t.clone() });
            continue;
        }
        *counts.entry(&t.subject).or_insert(0) += 1;
        *counts.entry(&t.object).or_insert(0) += 1;
    }
    for (entity, &count) in &counts {
        if count > config.max_edges_per_node {
            out.push(Violation::PerNode { entity: (*entity).clone(), count, max: config.max_edges_per_node });
        }
    }
    if !edges.contains(&subgraph.seed) {
        out.push(Violation::SeedMissing);
    }
    // Undirected BFS over the subgraph from the seed subject.
    let mut adjacency: HashMap<&EntityId, Vec<&EntityId>> = HashMap::new();
    for t in edges {
        adjacency.entry(&t.subject).or_default().push(&t.object);
        adjacency.entry(&t.object).or_default().push(&t.subject);
    }
    let root = &subgraph.seed.subject;
    let mut dist: HashMap<&EntityId, usize> = HashMap::from([(root, 0)]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        let d = dist[n];
        for &m in adjacency.get(n).into_iter().flatten() {
            if !dist.contains_key(m) {
                dist.insert(m, d + 1);
                queue.push_back(m);
            }
        }
    }
    for t in seen {
        match (dist.get(&t.subject), dist.get(&t.object)) {
            (None, _) | (_, None) => out.push(Violation::Disconnected { triplet: t.clone() }),
            (Some(&a), Some(&b)) if a.min(b) >= subgraph.depth_used.max(1) => {
                out.push(Violation::Depth { triplet: t.clone(), depth_used: subgraph.depth_used })
            }
            _ => {}
        }
    }
    out.sort_by_key(|v| v.to_string());
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::kg::{Direction, GraphBuilder};
    use proptest::prelude::*;
    use rand::Rng;

    fn registry() -> RelationRegistry {
        RelationRegistry::default()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn singleton_support_and_determinism() {
        let g = GraphBuilder::new()
            .triplet(Triplet::new("Q1", "P22", "Q2"))
            .triplet(Triplet::new("Q1", "P9999", "Q3"))
            .build();
        assert_eq!(sample_seed(&g, &registry(), &mut rng(1)).unwrap(), Triplet::new("Q1", "P22", "Q2"));
        let big = crate::extract::tests::random_graph(50, 200, 3);
        let a = sample_seed(&big, &registry(), &mut rng(42)).unwrap();
        let b = sample_seed(&big, &registry(), &mut rng(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_eligible_seed_names_whitelist() {
        let g = GraphBuilder::new().triplet(Triplet::new("Q1", "P9999", "Q2")).build();
        let err = sample_seed(&g, &registry(), &mut rng(0)).unwrap_err();
        assert!(err.to_string().contains("P22"), "{err}");
    }

    #[test]
    fn sampling_is_uniform() {
        // Two eligible triplets, 10,000 draws: each count within 3 sigma of 5,000.
        let g = GraphBuilder::new()
            .triplet(Triplet::new("Q1", "P22", "Q2"))
            .triplet(Triplet::new("Q3", "P25", "Q4"))
            .build();
        let sampler = SeedSampler::new(&g, &registry()).unwrap();
        let mut r = rng(9);
        let hits = (0..10_000).filter(|_| sampler.sample(&mut r).relation.as_str() == "P22").count() as f64;
        let sigma = (10_000.0f64 * 0.25).sqrt();
        assert!((hits - 5_000.0).abs() <= 3.0 * sigma, "{hits}");
    }

    #[test]
    fn star_is_capped_per_node() {
        let mut b = GraphBuilder::new();
        for i in 0..9 {
            b.push(Triplet::new("C", "P47", format!("L{i}")));
        }
        let g = b.build();
        let seed = Triplet::new("C", "P47", "L0");
        let config = ExtractionConfig::default();
        let sg = extract(&g, &registry(), &seed, &config, &mut rng(3)).unwrap();
        assert_eq!(sg.edges.len(), 5);
        assert_eq!(sg.per_node_edge_count[&EntityId::from("C")], 5);
        assert_eq!(sg.edges[0], seed);
    }

    #[test]
    fn chain_is_capped_at_max_edges() {
        let mut b = GraphBuilder::new();
        for i in 0..20 {
            b.push(Triplet::new(format!("N{i:02}"), "P47", format!("N{:02}", i + 1)));
        }
        let g = b.build();
        let config = ExtractionConfig { depth_range: [30, 30], ..Default::default() };
        let sg = extract(&g, &registry(), &Triplet::new("N00", "P47", "N01"), &config, &mut rng(0)).unwrap();
        assert_eq!(sg.edges.len(), 15);
        assert!(validate_constraints(&sg, &config).is_empty());
    }

    #[test]
    fn depth_one_is_the_subject_neighborhood() {
        let g = random_graph(40, 160, 11);
        let config = ExtractionConfig { depth_range: [1, 1], max_edges: 1000, max_edges_per_node: 1000, rng_seed: 0 };
        let sampler = SeedSampler::new(&g, &registry()).unwrap();
        let mut r = rng(5);
        for _ in 0..20 {
            let seed = sampler.sample(&mut r);
            let sg = extract(&g, &registry(), &seed, &config, &mut r).unwrap();
            let mut got: Vec<Triplet> = sg.edges.clone();
            got.sort();
            let mut oracle = g.neighbors(&seed.subject, Direction::Both).unwrap();
            oracle.sort();
            assert_eq!(got, oracle);
        }
    }

    #[test]
    fn seed_must_exist() {
        let g = GraphBuilder::new().triplet(Triplet::new("Q1", "P22", "Q2")).build();
        let err = extract(&g, &registry(), &Triplet::new("Q2", "P22", "Q1"), &ExtractionConfig::default(), &mut rng(0));
        assert!(matches!(err, Err(ExtractError::SeedNotInGraph(_))));
    }

    #[test]
    fn hand_built_violations() {
        let config = ExtractionConfig::default();
        let chain: Vec<Triplet> = (0..16).map(|i| Triplet::new(format!("N{i}"), "P47", format!("N{}", i + 1))).collect();
        let sg = Subgraph::from_edges(chain[0].clone(), chain, 100, &registry());
        assert_eq!(validate_constraints(&sg, &config), vec![Violation::MaxEdges { count: 16, max: 15 }]);

        let star: Vec<Triplet> = (0..6).map(|i| Triplet::new("C", "P47", format!("L{i}"))).collect();
        let sg = Subgraph::from_edges(star[0].clone(), star, 2, &registry());
        assert_eq!(
            validate_constraints(&sg, &config),
            vec![Violation::PerNode { entity: "C".into(), count: 6, max: 5 }]
        );

        let split = vec![Triplet::new("A", "P47", "B"), Triplet::new("X", "P47", "Y")];
        let sg = Subgraph::from_edges(split[0].clone(), split, 2, &registry());
        assert!(matches!(validate_constraints(&sg, &config).as_slice(), [Violation::Disconnected { .. }]));
    }

    #[test]
    fn domains_follow_registry() {
        let g = GraphBuilder::new()
            .triplet(Triplet::new("Q1", "P22", "Q2"))
            .triplet(Triplet::new("Q2", "P47", "Q3"))
            .triplet(Triplet::new("Q2", "P9999", "Q4"))
            .build();
        let config = ExtractionConfig { depth_range: [3, 3], ..Default::default() };
        let sg = extract(&g, &registry(), &Triplet::new("Q1", "P22", "Q2"), &config, &mut rng(0)).unwrap();
        assert_eq!(sg.edges.len(), 3);
        assert_eq!(sg.domains, [Domain::Human, Domain::Geography].into());
    }

    #[test]
    fn extract_many_is_deterministic() {
        let g = random_graph(80, 400, 2);
        let config = ExtractionConfig { rng_seed: 7, ..Default::default() };
        let a = extract_many(&g, &registry(), &config, 30).unwrap();
        let b = extract_many(&g, &registry(), &config, 30).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    /// Random graph over registry relations.
    pub(crate) fn random_graph(entities: usize, edges: usize, seed: u64) -> KnowledgeGraph {
        let relations: Vec<String> = registry().ids().map(|r| r.0.clone()).collect();
        let mut r = rng(seed);
        let mut b = GraphBuilder::new();
        for _ in 0..edges {
            let s = r.random_range(0..entities);
            let o = r.random_range(0..entities);
            let rel = &relations[r.random_range(0..relations.len())];
            b.push(Triplet::new(format!("Q{s}"), rel.clone(), format!("Q{o}")));
        }
        b.build()
    }

    proptest! {
        #[test]
        fn extraction_satisfies_constraints(
            gseed in 0u64..1000,
            n in 5usize..60,
            m in 1usize..300,
            task in 0u64..1000,
            cap in 1usize..7,
            max_edges in 1usize..20,
            lo in 1usize..4,
            span in 0usize..4,
        ) {
            let g = random_graph(n, m, gseed);
            let config = ExtractionConfig { max_edges, max_edges_per_node: cap, depth_range: [lo, lo + span], rng_seed: 0 };
            let Ok(sampler) = SeedSampler::new(&g, &registry()) else { return Ok(()) };
            let mut r = task_rng(gseed, task);
            let seed = sampler.sample(&mut r);
            let sg = extract(&g, &registry(), &seed, &config, &mut r).unwrap();
            prop_assert_eq!(validate_constraints(&sg, &config), vec![]);
            prop_assert_eq!(&sg.edges[0], &seed);
            for t in &sg.edges {
                prop_assert!(g.contains(t));
            }
            // Replaying discovery order: every edge touches an entity seen earlier.
            let mut seen: HashSet<&EntityId> = [&seed.subject].into();
            for t in &sg.edges {
                prop_assert!(seen.contains(&t.subject) || seen.contains(&t.object));
                seen.insert(&t.subject);
                seen.insert(&t.object);
            }
        }
    }
}
