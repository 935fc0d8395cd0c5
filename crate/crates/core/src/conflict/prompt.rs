use serde::{Deserialize, Serialize};

use super::{ConflictError, FewShotBank};
use crate::extract::Subgraph;
use crate::fact::{Fact, SurfaceTriple, Term};
use crate::kg::{SurfaceForms, Triplet};
use crate::registry::RelationRegistry;
use crate::templates::{TemplateName, Templates};
use crate::text::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    MultiHop,
    SingleHop,
    /// Multi-hop generation from the original triplet alone, without the
    /// surrounding subgraph.
    TripletOnly,
}

impl GenerationMode {
    fn template(self) -> TemplateName {
        match self {
            GenerationMode::MultiHop => TemplateName::GenerateMultiHop,
            GenerationMode::SingleHop => TemplateName::GenerateSingleHop,
            GenerationMode::TripletOnly => TemplateName::GenerateTripletOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationPrompt {
    pub text: String,
    pub mode: GenerationMode,
    /// No accepted demonstration existed for the seed relation.
    pub zero_shot: bool,
    pub demo_ids: Vec<String>,
    pub hash: String,
}

fn surface(t: &Triplet, aliases: &dyn SurfaceForms, registry: &RelationRegistry) -> String {
    Fact::from(t.clone()).surface(aliases, registry).to_string()
}

/// Render the generation prompt for `seed`. Accepted demonstrations for the
/// seed relation are embedded (at most three); with none the prompt is
/// zero-shot and flagged.
pub fn build_generation_prompt(
    templates: &Templates,
    seed: &Triplet,
    subgraph: &Subgraph,
    bank: &FewShotBank,
    mode: GenerationMode,
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
) -> Result<GenerationPrompt, ConflictError> {
    if mode != GenerationMode::TripletOnly && subgraph.edges.is_empty() {
        return Err(ConflictError::EmptySubgraph);
    }
    let demos = bank.for_prompt(&seed.relation);
    let zero_shot = demos.is_empty();
    if zero_shot {
        log::warn!("no accepted demonstrations for {}; building a zero-shot prompt", seed.relation);
    }
    let mut block = String::new();
    if !zero_shot {
        block.push_str("Demonstrations\n\n");
        for d in &demos {
            let modified: Vec<String> = d.replacement.iter().map(ToString::to_string).collect();
            block.push_str(&format!("[Original Triplet]\n{}\n\n[Modified Triplet]\n{}\n\n", d.original, modified.join(" ")));
        }
    }
    let related: Vec<String> =
        subgraph.edges.iter().filter(|t| *t != seed).map(|t| surface(t, aliases, registry)).collect();
    let original = surface(seed, aliases, registry);
    let related = related.join("\n");
    let text = templates.render(
        mode.template(),
        &[("demonstrations", &block), ("original_triplet", &original), ("subgraph", &related)],
    );
    let hash = sha256_hex(text.as_bytes());
    Ok(GenerationPrompt { text, mode, zero_shot, demo_ids: demos.iter().map(|d| d.id.clone()).collect(), hash })
}

/// Extract every parenthesized `(subject | relation | object)` tuple.
/// Parentheses nest, so labels like "tocantins (state)" survive; a group
/// without exactly three top-level parts is searched for nested tuples.
pub fn parse_triplet_output(text: &str) -> Result<Vec<SurfaceTriple>, ConflictError> {
    let mut out = Vec::new();
    scan(text, &mut out);
    if out.is_empty() {
        return Err(ConflictError::NoTuples { raw: text.to_string() });
    }
    Ok(out)
}

fn scan(text: &str, out: &mut Vec<SurfaceTriple>) {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'(' {
            i += 1;
            continue;
        }
        let mut depth = 0usize;
        let mut close = None;
        for (j, &b) in bytes.iter().enumerate().skip(i) {
            match b {
                b'(' => depth += 1,
                b')' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(j);
                        break;
                    }
                }
                _ => {}
            }
        }
        let Some(j) = close else {
            // Unbalanced: retry from the next character.
            i += 1;
            continue;
        };
        let inner = &text[i + 1..j];
        let parts = split_top_level(inner);
        if parts.len() == 3 && parts.iter().all(|p| !p.trim().is_empty()) {
            out.push(SurfaceTriple::new(parts[0].trim(), parts[1].trim(), parts[2].trim()));
        } else {
            scan(inner, out);
        }
        i = j + 1;
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            '|' if depth == 0 => {
                parts.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Map surface tuples onto graph ids where the aliases or registry resolve
/// them; the rest stays free text.
pub fn resolve_surface_triples(
    triples: &[SurfaceTriple],
    aliases: &dyn SurfaceForms,
    registry: &RelationRegistry,
) -> Vec<Fact> {
    let entity = |s: &str| aliases.resolve_entity(s).map(Term::Id).unwrap_or_else(|| Term::Text(s.to_string()));
    triples
        .iter()
        .map(|t| {
            let (relation, negated) = match aliases.resolve_relation(&t.relation) {
                Some(id) => (Term::Id(id), false),
                None => match registry.resolve_surface(&t.relation) {
                    Some((id, neg)) => (Term::Id(id.0), neg),
                    None => (Term::Text(t.relation.clone()), false),
                },
            };
            Fact { subject: entity(&t.subject), relation, object: entity(&t.object), negated }
        })
        .collect()
}
