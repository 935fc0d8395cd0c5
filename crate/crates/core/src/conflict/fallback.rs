//! Rule-based perturbations so the pipeline runs without a model.
//!
//! Multi-hop chains come from a small pattern library; each pattern names
//! the seed relations it applies to. Contradiction is certified by the
//! pattern's shape, not by inference.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{assemble_instance, ConflictError, ConflictSpec, ConflictType, HopClass, PerturbationGroup, Provenance};
use crate::extract::Subgraph;
use crate::fact::{Fact, Term};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triplet};
use crate::registry::RelationRegistry;

/// Free-text relation closing a relocation chain.
pub const DISTINCT_FROM: &str = "is geographically distinct from";

const BORDER: &str = "P47";
const EQUIVALENT: &str = "P460";
const DIFFERENT: &str = "P1889";
const CONTAINMENT: &[&str] = &["P150", "P4330", "P527"];
const LOCATED: &[&str] = &["P937", "P551", "P189"];
/// Relations placing the seed subject somewhere else.
const PLACEMENT: &[&str] = &["P19", "P20", "P131", "P276", "P551", "P937"];
const PART_OF: &[&str] = &["P361", "P131"];
/// Bound on enumerated candidate chains per seed.
const MAX_CANDIDATES: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleHopMode {
    /// Prefer replacing the object; negate when no substitute exists.
    Substitution,
    /// Prefer negating the relation; substitute when no negated phrase exists.
    Negation,
    /// Pick uniformly among every available option.
    #[default]
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiHopPattern {
    /// `(A contains B)` → `(A borders C), (C contains B)`.
    ContainmentReroute,
    /// `(A located L)` → `(A placed D), (D part of E), (E distinct from L)`.
    AttributeRelocation,
    /// `(A equivalent B)` → `(A equivalent C), (C equivalent D), (D different from B)`.
    EquivalenceBreak,
    /// `(A different from B)` → `(A equivalent C), (C equivalent B)`.
    DifferenceBreak,
}

impl MultiHopPattern {
    pub fn for_relation(relation: &RelationId) -> Option<Self> {
        let r = relation.as_str();
        if CONTAINMENT.contains(&r) {
            Some(MultiHopPattern::ContainmentReroute)
        } else if LOCATED.contains(&r) {
            Some(MultiHopPattern::AttributeRelocation)
        } else if r == EQUIVALENT {
            Some(MultiHopPattern::EquivalenceBreak)
        } else if r == DIFFERENT {
            Some(MultiHopPattern::DifferenceBreak)
        } else {
            None
        }
    }
}

/// Objects usable as a substitute for the seed object: other objects of the
/// same relation, never the seed's own object or subject, and never one that
/// would restate an existing fact.
pub fn substitution_pool(graph: &KnowledgeGraph, seed: &Triplet) -> Vec<EntityId> {
    let pool: BTreeSet<EntityId> = graph
        .triplets()
        .filter(|t| t.relation == seed.relation)
        .map(|t| t.object)
        .filter(|o| *o != seed.object && *o != seed.subject)
        .filter(|o| !graph.contains(&Triplet { subject: seed.subject.clone(), relation: seed.relation.clone(), object: o.clone() }))
        .collect();
    pool.into_iter().collect()
}

/// Every single-hop replacement the fallback can produce for `seed`:
/// substitutions in pool order, then the negation if the registry has one.
pub fn single_hop_options(graph: &KnowledgeGraph, seed: &Triplet, registry: &RelationRegistry) -> (Vec<Fact>, Option<Fact>) {
    let subs = substitution_pool(graph, seed)
        .into_iter()
        .map(|o| Fact::from(Triplet { subject: seed.subject.clone(), relation: seed.relation.clone(), object: o }))
        .collect();
    let negation = registry.get(&seed.relation).and_then(|e| e.negated.as_ref()).map(|_| Fact::negation_of(seed));
    (subs, negation)
}

pub fn generate_single_hop_fallback<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    seed: &Triplet,
    registry: &RelationRegistry,
    mode: SingleHopMode,
    rng: &mut R,
) -> Result<PerturbationGroup, ConflictError> {
    if !registry.contains(&seed.relation) {
        return Err(ConflictError::Infeasible { seed: seed.clone(), reason: format!("{} is not a registry relation", seed.relation) });
    }
    let (subs, negation) = single_hop_options(graph, seed, registry);
    let pick_sub = |rng: &mut R| subs[rng.random_range(0..subs.len())].clone();
    let replacement = match (mode, subs.is_empty(), negation) {
        (_, true, None) => {
            return Err(ConflictError::Infeasible {
                seed: seed.clone(),
                reason: "no substitute object and no negated phrase".into(),
            })
        }
        (SingleHopMode::Negation, _, Some(n)) | (_, true, Some(n)) => n,
        (SingleHopMode::Substitution, false, _) | (SingleHopMode::Negation, false, None) => pick_sub(rng),
        (SingleHopMode::Random, false, Some(n)) => {
            let k = rng.random_range(0..=subs.len());
            if k == subs.len() {
                n
            } else {
                subs[k].clone()
            }
        }
        (SingleHopMode::Random, false, None) => pick_sub(rng),
    };
    PerturbationGroup::single_hop(seed.clone(), replacement)
}

/// Incident triplets of `entity` under `relation`, in either direction,
/// paired with the counterpart entity.
fn adjacent(graph: &KnowledgeGraph, entity: &EntityId, relation: &str) -> Vec<(Triplet, EntityId)> {
    let Some(node) = graph.node(entity) else { return vec![] };
    graph
        .incident_edges(node)
        .filter(|&e| graph.relation_of(e).as_str() == relation)
        .map(|e| {
            let t = graph.triplet(e);
            let other = if &t.subject == entity { t.object.clone() } else { t.subject.clone() };
            (t, other)
        })
        .collect()
}

fn outgoing(graph: &KnowledgeGraph, entity: &EntityId, relations: &[&str]) -> Vec<Triplet> {
    let Some(node) = graph.node(entity) else { return vec![] };
    graph
        .out_edges(node)
        .iter()
        .filter(|&&e| relations.contains(&graph.relation_of(e).as_str()))
        .map(|&e| graph.triplet(e))
        .collect()
}

fn new_fact(s: &EntityId, r: &str, o: &EntityId) -> Fact {
    Fact::from(Triplet::new(s.as_str(), r, o.as_str()))
}

fn candidate_chains(graph: &KnowledgeGraph, seed: &Triplet, pattern: MultiHopPattern) -> Vec<Vec<Fact>> {
    let (a, b) = (&seed.subject, &seed.object);
    let mut out: Vec<Vec<Fact>> = Vec::new();
    match pattern {
        MultiHopPattern::ContainmentReroute => {
            for (border, c) in adjacent(graph, a, BORDER) {
                if c == *b || graph.contains(&Triplet { subject: c.clone(), relation: seed.relation.clone(), object: b.clone() }) {
                    continue;
                }
                out.push(vec![Fact::from(border), new_fact(&c, seed.relation.as_str(), b)]);
            }
        }
        MultiHopPattern::AttributeRelocation => {
            for placed in outgoing(graph, a, PLACEMENT) {
                let d = placed.object.clone();
                if d == *b || placed == *seed {
                    continue;
                }
                let distinct = |from: &EntityId| Fact::new(Term::Id(from.0.clone()), Term::text(DISTINCT_FROM), Term::Id(b.0.clone()));
                out.push(vec![Fact::from(placed.clone()), distinct(&d)]);
                for part in outgoing(graph, &d, PART_OF) {
                    let e = &part.object;
                    if e == b || e == a {
                        continue;
                    }
                    out.push(vec![Fact::from(placed.clone()), Fact::from(part.clone()), distinct(e)]);
                    if out.len() >= MAX_CANDIDATES {
                        return out;
                    }
                }
            }
        }
        MultiHopPattern::EquivalenceBreak => {
            for (first, c) in adjacent(graph, a, EQUIVALENT) {
                if c == *b {
                    continue;
                }
                out.push(vec![Fact::from(first.clone()), new_fact(&c, DIFFERENT, b)]);
                for (second, d) in adjacent(graph, &c, EQUIVALENT) {
                    if d == *a || d == *b {
                        continue;
                    }
                    out.push(vec![Fact::from(first.clone()), Fact::from(second), new_fact(&d, DIFFERENT, b)]);
                    if out.len() >= MAX_CANDIDATES {
                        return out;
                    }
                }
            }
        }
        MultiHopPattern::DifferenceBreak => {
            for (first, c) in adjacent(graph, a, EQUIVALENT) {
                if c == *b || graph.contains(&Triplet::new(c.as_str(), EQUIVALENT, b.as_str())) {
                    continue;
                }
                out.push(vec![Fact::from(first), new_fact(&c, EQUIVALENT, b)]);
            }
        }
    }
    out
}

/// Build a 2–3 fact chain contradicting `seed` indirectly. Longer chains are
/// preferred, then chains whose intermediate entities already appear in the
/// subgraph; remaining ties are broken by `rng`.
pub fn generate_multi_hop_fallback<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    seed: &Triplet,
    subgraph: &Subgraph,
    rng: &mut R,
) -> Result<PerturbationGroup, ConflictError> {
    let infeasible = |reason: String| ConflictError::Infeasible { seed: seed.clone(), reason };
    if subgraph.edges.is_empty() {
        return Err(infeasible("empty subgraph".into()));
    }
    let pattern = MultiHopPattern::for_relation(&seed.relation)
        .ok_or_else(|| infeasible(format!("no multi-hop pattern for relation {}", seed.relation)))?;
    let in_subgraph: BTreeSet<&str> = subgraph.entities().into_iter().map(|e| e.as_str()).collect();
    let score = |chain: &Vec<Fact>| {
        let anchored = chain.iter().flat_map(|f| f.entity_ids()).filter(|e| in_subgraph.contains(e)).collect::<BTreeSet<_>>().len();
        (chain.len(), anchored)
    };
    let candidates = candidate_chains(graph, seed, pattern);
    let best = candidates.iter().map(score).max().ok_or_else(|| infeasible(format!("{pattern:?}: no intermediate entity available")))?;
    let top: Vec<&Vec<Fact>> = candidates.iter().filter(|c| score(c) == best).collect();
    let chain = top[rng.random_range(0..top.len())].clone();
    PerturbationGroup::multi_hop(seed.clone(), chain)
}

/// Grow an instance of type `ctype` on `subgraph` from fallback groups.
///
/// Candidates are the seed, then the other subgraph edges in shuffled order.
/// Multi-hop types try a chain first and a single-hop group second, keeping
/// the last slot for a chain if none was found yet. A group is kept only if
/// the instance still assembles with it.
pub fn generate_fallback_instance<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    subgraph: &Subgraph,
    registry: &RelationRegistry,
    ctype: ConflictType,
    mode: SingleHopMode,
    rng: &mut R,
) -> Result<ConflictSpec, ConflictError> {
    let n = usize::from(ctype.n);
    let want_multi = ctype.hop == HopClass::MultiHop;
    let mut rest: Vec<&Triplet> = subgraph.edges.iter().filter(|t| **t != subgraph.seed).collect();
    rest.shuffle(rng);
    let mut groups: Vec<PerturbationGroup> = Vec::with_capacity(n);
    for t in std::iter::once(&subgraph.seed).chain(rest) {
        if groups.len() == n {
            break;
        }
        let has_multi = groups.iter().any(|g| g.hop == HopClass::MultiHop);
        let last_needs_chain = want_multi && !has_multi && groups.len() + 1 == n;
        let mut attempts = Vec::new();
        if want_multi {
            attempts.push(generate_multi_hop_fallback(graph, t, subgraph, rng));
        }
        if !last_needs_chain {
            attempts.push(generate_single_hop_fallback(graph, t, registry, mode, rng));
        }
        for g in attempts.into_iter().flatten() {
            let mut trial = groups.clone();
            trial.push(g);
            if assemble_instance(subgraph, trial.clone(), Provenance::rule()).is_ok() {
                groups = trial;
                break;
            }
        }
    }
    if groups.len() < n || (want_multi && !groups.iter().any(|g| g.hop == HopClass::MultiHop)) {
        return Err(ConflictError::Infeasible {
            seed: subgraph.seed.clone(),
            reason: format!("found {} of {n} independent groups for {ctype}", groups.len()),
        });
    }
    assemble_instance(subgraph, groups, Provenance::rule())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::GraphBuilder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn registry() -> RelationRegistry {
        RelationRegistry::default()
    }

    #[test]
    fn captain_substitution() {
        let g = GraphBuilder::new()
            .triplet(Triplet::new("tour1891", "P634", "maclagen"))
            .triplet(Triplet::new("tour1896", "P634", "burrows"))
            .build();
        let seed = Triplet::new("tour1891", "P634", "maclagen");
        let group = generate_single_hop_fallback(&g, &seed, &registry(), SingleHopMode::Random, &mut rng()).unwrap();
        assert_eq!(group.replacement, vec![Fact::from(Triplet::new("tour1891", "P634", "burrows"))]);
    }

    #[test]
    fn negation_when_requested() {
        let g = GraphBuilder::new()
            .triplet(Triplet::new("hastings", "P3179", "kings"))
            .triplet(Triplet::new("x", "P3179", "albert"))
            .build();
        let seed = Triplet::new("hastings", "P3179", "kings");
        let group = generate_single_hop_fallback(&g, &seed, &registry(), SingleHopMode::Negation, &mut rng()).unwrap();
        assert_eq!(group.replacement, vec![Fact::negation_of(&seed)]);
    }

    #[test]
    fn empty_pool_without_negation_is_infeasible() {
        let g = GraphBuilder::new().triplet(Triplet::new("a", "P22", "b")).triplet(Triplet::new("c", "P22", "b")).build();
        let err = generate_single_hop_fallback(&g, &Triplet::new("a", "P22", "b"), &registry(), SingleHopMode::Random, &mut rng());
        assert!(matches!(err, Err(ConflictError::Infeasible { .. })));
    }

    #[test]
    fn pool_excludes_existing_facts_and_subject() {
        let g = GraphBuilder::new()
            .triplet(Triplet::new("a", "P47", "b"))
            .triplet(Triplet::new("a", "P47", "c"))
            .triplet(Triplet::new("d", "P47", "a"))
            .triplet(Triplet::new("d", "P47", "e"))
            .build();
        let pool = substitution_pool(&g, &Triplet::new("a", "P47", "b"));
        assert_eq!(pool, vec![EntityId::from("e")]);
    }

    #[test]
    fn no_second_neighbor_is_infeasible() {
        let g = GraphBuilder::new().triplet(Triplet::new("t", "P150", "n")).build();
        let seed = Triplet::new("t", "P150", "n");
        let sg = Subgraph::from_edges(seed.clone(), vec![seed.clone()], 2, &registry());
        let err = generate_multi_hop_fallback(&g, &seed, &sg, &mut rng()).unwrap_err();
        assert!(err.to_string().contains("intermediate"), "{err}");
        let father = Triplet::new("t", "P22", "n");
        let err = generate_multi_hop_fallback(&g, &father, &sg, &mut rng()).unwrap_err();
        assert!(err.to_string().contains("P22"), "{err}");
    }

    #[test]
    fn relocation_prefers_three_hops() {
        let g = GraphBuilder::new()
            .triplet(Triplet::new("duke", "P937", "london"))
            .triplet(Triplet::new("duke", "P20", "stoke"))
            .triplet(Triplet::new("stoke", "P361", "sglos"))
            .build();
        let seed = Triplet::new("duke", "P937", "london");
        let sg = Subgraph::from_edges(seed.clone(), vec![seed.clone(), Triplet::new("duke", "P20", "stoke")], 2, &registry());
        let group = generate_multi_hop_fallback(&g, &seed, &sg, &mut rng()).unwrap();
        assert_eq!(
            group.replacement,
            vec![
                Fact::from(Triplet::new("duke", "P20", "stoke")),
                Fact::from(Triplet::new("stoke", "P361", "sglos")),
                Fact::new(Term::id("sglos"), Term::text(DISTINCT_FROM), Term::id("london")),
            ]
        );
    }

    fn province() -> (KnowledgeGraph, Subgraph) {
        let edges = vec![
            Triplet::new("to", "P150", "nj"),
            Triplet::new("to", "P47", "mt"),
            Triplet::new("mt", "P150", "cu"),
            Triplet::new("to", "P47", "go"),
            Triplet::new("go", "P150", "an"),
            Triplet::new("go", "P47", "ba"),
        ];
        let g = edges.iter().cloned().fold(GraphBuilder::new(), GraphBuilder::triplet).build();
        let sg = Subgraph::from_edges(edges[0].clone(), edges, 3, &registry());
        (g, sg)
    }

    #[test]
    fn instance_has_requested_type_and_seed_first() {
        let (g, sg) = province();
        for ctype in ConflictType::all() {
            for s in 0..8 {
                let mut r = ChaCha8Rng::seed_from_u64(s);
                match generate_fallback_instance(&g, &sg, &registry(), ctype, SingleHopMode::Random, &mut r) {
                    Ok(spec) => {
                        assert_eq!(spec.conflict_type, ctype);
                        assert_eq!(spec.groups[0].original[0], sg.seed);
                    }
                    Err(ConflictError::Infeasible { .. }) => assert!(ctype.n >= 3, "{ctype} should be feasible"),
                    Err(e) => panic!("{ctype}: {e}"),
                }
            }
        }
    }

    #[test]
    fn too_small_subgraph_is_infeasible() {
        let (g, _) = province();
        let seed = Triplet::new("to", "P150", "nj");
        let sg = Subgraph::from_edges(seed.clone(), vec![seed], 1, &registry());
        let want = ConflictType::new(HopClass::SingleHop, 2).unwrap();
        let err = generate_fallback_instance(&g, &sg, &registry(), want, SingleHopMode::Random, &mut rng()).unwrap_err();
        assert!(err.to_string().contains("found 1 of 2"), "{err}");
    }
}
