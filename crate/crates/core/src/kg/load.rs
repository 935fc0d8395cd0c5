use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{AliasEntry, AliasTable, Aliases, GraphBuilder, KgError, KnowledgeGraph, Triplet};

const MAX_EXAMPLES: usize = 20;

/// What ingestion skipped and why.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub triplet_lines: usize,
    pub malformed_triplet_lines: usize,
    pub malformed_alias_lines: usize,
    /// `source:line` of the first few malformed lines.
    pub malformed_examples: Vec<String>,
    pub self_loops: usize,
    pub duplicates: usize,
    /// Triplets excluded because an id is missing from the alias files.
    pub dangling_triplets: usize,
    pub missing_entities: BTreeSet<String>,
    pub missing_relations: BTreeSet<String>,
}

impl LoadReport {
    pub fn malformed_lines(&self) -> usize {
        self.malformed_triplet_lines + self.malformed_alias_lines
    }

    fn note(&mut self, source: &str, line_no: usize) {
        if self.malformed_examples.len() < MAX_EXAMPLES {
            self.malformed_examples.push(format!("{source}:{line_no}"));
        }
    }
}

/// Iterate lines as lossless-or-rejected UTF-8; invalid UTF-8 is `None`.
fn lines<R: BufRead>(mut reader: R, source: &'static str) -> impl Iterator<Item = Result<Option<String>, KgError>> {
    let mut buf = Vec::new();
    std::iter::from_fn(move || {
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                while matches!(buf.last(), Some(b'\n' | b'\r')) {
                    buf.pop();
                }
                Some(Ok(String::from_utf8(buf.clone()).ok()))
            }
            Err(error) => Some(Err(KgError::Io { source_name: source, error })),
        }
    })
}

fn read_aliases<R: BufRead>(reader: R, source: &'static str, report: &mut LoadReport) -> Result<AliasTable, KgError> {
    let mut table = AliasTable::default();
    for (i, line) in lines(reader, source).enumerate() {
        let Some(line) = line? else {
            report.malformed_alias_lines += 1;
            report.note(source, i + 1);
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or("").trim();
        if id.is_empty() {
            report.malformed_alias_lines += 1;
            report.note(source, i + 1);
            continue;
        }
        table.insert(AliasEntry::new(id, cols));
    }
    Ok(table)
}

/// Load a graph from tab-separated triplet and alias streams.
///
/// Lines with the wrong arity are counted as malformed. Triplets naming an
/// id absent from the alias files are excluded and listed in the report.
pub fn load_graph<T: BufRead, E: BufRead, R: BufRead>(
    triplets: T,
    entity_aliases: E,
    relation_aliases: R,
) -> Result<(KnowledgeGraph, LoadReport), KgError> {
    let mut report = LoadReport::default();
    let entities = read_aliases(entity_aliases, "entities", &mut report)?;
    let relations = read_aliases(relation_aliases, "relations", &mut report)?;
    let mut builder = GraphBuilder::new();
    for (i, line) in lines(triplets, "triplets").enumerate() {
        let Some(line) = line? else {
            report.malformed_triplet_lines += 1;
            report.note("triplets", i + 1);
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        report.triplet_lines += 1;
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            report.malformed_triplet_lines += 1;
            report.note("triplets", i + 1);
            continue;
        }
        let (s, r, o) = (cols[0], cols[1], cols[2]);
        let mut dangling = false;
        for e in [s, o] {
            if !entities.contains(e) {
                report.missing_entities.insert(e.to_string());
                dangling = true;
            }
        }
        if !relations.contains(r) {
            report.missing_relations.insert(r.to_string());
            dangling = true;
        }
        if dangling {
            report.dangling_triplets += 1;
            continue;
        }
        builder.push(Triplet::new(s, r, o));
    }
    builder.set_aliases(Aliases { entities, relations });
    let (mut graph, self_loops, duplicates) = builder.build_counting();
    report.self_loops = self_loops;
    report.duplicates = duplicates;
    // Keep alias tables to what the graph actually references.
    let aliases = graph.aliases.clone();
    graph.aliases = Aliases {
        entities: aliases.entities.retain(|id| graph.entity_index.contains_key(id)),
        relations: aliases.relations.retain(|id| graph.relation_index.contains_key(id)),
    };
    Ok((graph, report))
}

/// Write the graph as triplet, entity-alias and relation-alias TSV streams.
pub fn write_triplets<T: Write, E: Write, R: Write>(
    graph: &KnowledgeGraph,
    mut triplets: T,
    mut entities: E,
    mut relations: R,
) -> std::io::Result<()> {
    for t in graph.triplets() {
        writeln!(triplets, "{}\t{}\t{}", t.subject, t.relation, t.object)?;
    }
    for (table, out) in [(&graph.aliases.entities, &mut entities as &mut dyn Write), (&graph.aliases.relations, &mut relations)] {
        for e in table.iter() {
            write!(out, "{}", e.id)?;
            for a in &e.aliases {
                write!(out, "\t{a}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}
