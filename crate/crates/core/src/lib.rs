//! Knowledge-graph driven synthesis of inter-context conflict benchmarks.
//!
//! The pipeline runs in stages, each of which reads and writes plain files:
//!
//! 1. [`kg`] loads and filters a triplet graph and indexes adjacency.
//! 2. [`extract`] samples seed triplets and grows bounded subgraphs by DFS.
//! 3. [`conflict`] perturbs subgraphs into single- and multi-hop conflicts.
//! 4. [`verbalize`] turns original and perturbed triplets into paired contexts
//!    and records where each conflict surfaces in the text.
//! 5. [`eval`] prompts models to identify and localize conflicts and scores them.
//!
//! [`llm`] is the model gateway shared by every prompted step, [`dataset`]
//! persists benchmark records, and [`review`] backs the human curation
//! workflow over HTTP.

pub mod conflict;
pub mod dataset;
pub mod eval;
pub mod extract;
pub mod fact;
pub mod kg;
pub mod llm;
pub mod pipeline;
pub mod registry;
pub mod review;
pub mod templates;
pub mod text;
pub mod verbalize;

pub use fact::{Fact, Term};
pub use kg::{EntityId, KnowledgeGraph, RelationId, Triplet};
pub use registry::{Domain, RelationRegistry};

/// Version string stamped into record provenance.
pub const PIPELINE_VERSION: &str = concat!("kconflict/", env!("CARGO_PKG_VERSION"));
