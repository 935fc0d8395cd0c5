//! Benchmark records: schema, validation, line-delimited JSON storage
//! (optionally gzip-compressed), statistics and external-dataset adapters.

mod adapt;

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::conflict::{ConflictType, Generator, HopClass, PerturbationGroup};
use crate::fact::{Fact, Term};
use crate::kg::Triplet;
use crate::registry::{Domain, RelationRegistry};
use crate::text::{split_sentences, whitespace_tokens};
use crate::verbalize::{CoverageReport, GoldPair, Verdict};

pub use adapt::{adapt_external, AdaptReport, AdapterMapping, ExternalSource, InputFormat, RowError};

pub const SCHEMA_VERSION: u32 = 1;

/// Reference benchmark instance counts, single-hop 1..4 then multi-hop 1..4.
pub const REFERENCE_QUOTA: [usize; 8] = [208, 154, 80, 50, 300, 158, 80, 50];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {id}: {field}: {message}")]
    Invalid { id: String, field: &'static str, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(id: &str, field: &'static str, message: impl Into<String>) -> DatasetError {
    DatasetError::Invalid { id: id.to_string(), field, message: message.into() }
}

/// Compact view of a coverage check kept with the record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageDigest {
    pub conflict_covered: bool,
    pub subgraph_coverage_ratio: f64,
    pub missing: usize,
    pub verdict: Verdict,
}

impl From<&CoverageReport> for CoverageDigest {
    fn from(r: &CoverageReport) -> Self {
        CoverageDigest {
            conflict_covered: r.conflict_covered,
            subgraph_coverage_ratio: r.subgraph_coverage_ratio,
            missing: r.missing_triplets.len(),
            verdict: r.verifier_verdict,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordProvenance {
    pub generator: Option<Generator>,
    #[serde(default)]
    pub model_ids: Vec<String>,
    #[serde(default)]
    pub prompt_hashes: Vec<String>,
    #[serde(default)]
    pub review_decisions: Vec<String>,
    pub pipeline_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub schema_version: u32,
    pub id: String,
    /// "kconflict" for generated records, otherwise the adapted dataset.
    pub source: String,
    pub conflict_type: Option<ConflictType>,
    pub n_conflicts: usize,
    #[serde(default)]
    pub seed_triplets: Vec<Triplet>,
    #[serde(default)]
    pub groups: Vec<PerturbationGroup>,
    #[serde(default)]
    pub subgraph: Vec<Triplet>,
    pub context_a: String,
    pub context_b: String,
    #[serde(default)]
    pub gold: Vec<GoldPair>,
    /// Sentence-level gold exists, so LOC can be scored.
    pub loc_eligible: bool,
    #[serde(default)]
    pub domains: Vec<Domain>,
    /// Relations of the seed triplets.
    #[serde(default)]
    pub relations: Vec<String>,
    /// Relation surfaces the registry does not know, kept as free text.
    #[serde(default)]
    pub free_text_relations: Vec<String>,
    #[serde(default)]
    pub coverage: Vec<CoverageDigest>,
    pub provenance: RecordProvenance,
    /// Fields this version does not know, kept for forward compatibility.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl BenchmarkRecord {
    pub fn context_tokens(&self) -> usize {
        whitespace_tokens(&self.context_a) + whitespace_tokens(&self.context_b)
    }

    /// Free-text relations used by the perturbation groups.
    pub fn free_text_in_groups(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .groups
            .iter()
            .flat_map(|g| &g.replacement)
            .filter_map(|f: &Fact| match &f.relation {
                Term::Text(t) => Some(t.clone()),
                Term::Id(_) => None,
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn validate(&self, registry: &RelationRegistry) -> Result<(), DatasetError> {
        let id = self.id.as_str();
        if id.is_empty() {
            return Err(invalid("<empty>", "id", "must not be empty"));
        }
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(id, "schema_version", format!("{} is not {SCHEMA_VERSION}", self.schema_version)));
        }
        if self.context_a.trim().is_empty() {
            return Err(invalid(id, "context_a", "empty"));
        }
        if self.context_b.trim().is_empty() {
            return Err(invalid(id, "context_b", "empty"));
        }
        if !self.groups.is_empty() && self.n_conflicts != self.groups.len() {
            return Err(invalid(id, "n_conflicts", format!("{} but {} groups", self.n_conflicts, self.groups.len())));
        }
        if let Some(t) = self.conflict_type {
            if usize::from(t.n) != self.n_conflicts {
                return Err(invalid(id, "conflict_type", format!("{t} but {} conflicts", self.n_conflicts)));
            }
        }
        if self.loc_eligible {
            if self.gold.len() != self.n_conflicts {
                return Err(invalid(id, "gold", format!("{} gold pairs for {} conflicts", self.gold.len(), self.n_conflicts)));
            }
            let (na, nb) = (split_sentences(&self.context_a).len(), split_sentences(&self.context_b).len());
            for g in &self.gold {
                if g.a_sentences.is_empty() || g.b_sentences.is_empty() {
                    return Err(invalid(id, "gold", format!("group {} has an empty side", g.group)));
                }
                if g.a_sentences.iter().any(|&i| i >= na) || g.b_sentences.iter().any(|&i| i >= nb) {
                    return Err(invalid(id, "gold", format!("group {} points past the last sentence", g.group)));
                }
            }
        }
        for r in &self.relations {
            if !registry.contains(&r.as_str().into()) && !is_property_id(r) && !self.free_text_relations.contains(r) {
                return Err(invalid(id, "relations", format!("{r:?} is not a relation id and is not flagged as free text")));
            }
        }
        for r in self.free_text_in_groups() {
            if !self.free_text_relations.contains(&r) {
                return Err(invalid(id, "free_text_relations", format!("{r:?} is used but not flagged")));
            }
        }
        Ok(())
    }
}

/// `P` followed by digits.
fn is_property_id(s: &str) -> bool {
    s.len() > 1 && s.starts_with('P') && s[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Validate every record, then write one JSON object per line.
pub fn write_records<W: Write>(records: &[BenchmarkRecord], mut out: W, registry: &RelationRegistry) -> Result<usize, DatasetError> {
    for r in records {
        r.validate(registry)?;
    }
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<BenchmarkRecord>, DatasetError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Parse { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

/// Open a file for reading, decompressing when it starts with the gzip
/// magic bytes.
pub fn open_maybe_gz(path: &Path) -> std::io::Result<Box<dyn BufRead>> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

pub fn read_records_path(path: &Path) -> Result<Vec<BenchmarkRecord>, DatasetError> {
    read_records(open_maybe_gz(path)?)
}

/// Write atomically; a `.gz` extension selects gzip compression.
pub fn write_records_path(records: &[BenchmarkRecord], path: &Path, registry: &RelationRegistry) -> Result<usize, DatasetError> {
    let mut buf = Vec::new();
    let n = if path.extension().is_some_and(|e| e == "gz") {
        let mut gz = GzEncoder::new(&mut buf, Compression::default());
        let n = write_records(records, &mut gz, registry)?;
        gz.finish()?;
        n
    } else {
        write_records(records, &mut buf, registry)?
    };
    crate::llm::write_atomic(path, &buf)?;
    Ok(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// All eight types in table order, zeros included.
    pub by_conflict_type: Vec<(String, usize)>,
    pub untyped: usize,
    pub by_domain: BTreeMap<String, usize>,
    pub by_domain_count: BTreeMap<usize, usize>,
    pub by_source: BTreeMap<String, usize>,
    pub loc_eligible: usize,
    /// Whitespace tokens of both contexts together.
    pub context_tokens: Option<LengthSummary>,
}

pub fn stats(records: &[BenchmarkRecord]) -> DatasetStats {
    let mut by_type: BTreeMap<ConflictType, usize> = BTreeMap::new();
    let mut by_domain = BTreeMap::new();
    let mut by_domain_count = BTreeMap::new();
    let mut by_source = BTreeMap::new();
    let mut untyped = 0;
    for r in records {
        match r.conflict_type {
            Some(t) => *by_type.entry(t).or_default() += 1,
            None => untyped += 1,
        }
        let distinct: HashSet<&Domain> = r.domains.iter().collect();
        for d in &distinct {
            *by_domain.entry(d.to_string()).or_default() += 1;
        }
        *by_domain_count.entry(distinct.len()).or_default() += 1;
        *by_source.entry(r.source.clone()).or_default() += 1;
    }
    let mut lengths: Vec<usize> = records.iter().map(BenchmarkRecord::context_tokens).collect();
    lengths.sort_unstable();
    let context_tokens = (!lengths.is_empty()).then(|| {
        let n = lengths.len();
        let median = if n % 2 == 1 { lengths[n / 2] as f64 } else { (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0 };
        LengthSummary {
            min: lengths[0],
            max: lengths[n - 1],
            mean: lengths.iter().sum::<usize>() as f64 / n as f64,
            median,
        }
    });
    DatasetStats {
        total: records.len(),
        by_conflict_type: ConflictType::all().iter().map(|t| (t.to_string(), by_type.get(t).copied().unwrap_or(0))).collect(),
        untyped,
        by_domain,
        by_domain_count,
        by_source,
        loc_eligible: records.iter().filter(|r| r.loc_eligible).count(),
        context_tokens,
    }
}

/// Structurally valid placeholder records in the given per-type quota,
/// for exercising storage, statistics and reporting at full size.
pub fn stub_dataset(quota: &[usize; 8]) -> Vec<BenchmarkRecord> {
    let mut out = Vec::new();
    for (ti, t) in ConflictType::all().into_iter().enumerate() {
        for k in 0..quota[ti] {
            let id = format!("stub-{}-{k:04}", t.key());
            let n = usize::from(t.n);
            let mut groups = Vec::new();
            let mut a = Vec::new();
            let mut b = Vec::new();
            let mut gold = Vec::new();
            for g in 0..n {
                let orig = Triplet::new(format!("S{g}"), "P150", format!("O{g}"));
                let group = match t.hop {
                    HopClass::SingleHop => PerturbationGroup::single_hop(orig, Fact::from(Triplet::new(format!("S{g}"), "P150", format!("X{g}")))),
                    HopClass::MultiHop => PerturbationGroup::multi_hop(
                        orig,
                        vec![
                            Fact::from(Triplet::new(format!("S{g}"), "P47", format!("M{g}"))),
                            Fact::from(Triplet::new(format!("M{g}"), "P150", format!("O{g}"))),
                        ],
                    ),
                }
                .expect("stub groups are well formed");
                groups.push(group);
                a.push(format!("Region S{g} contains O{g}."));
                b.push(format!("Region S{g} contains X{g}."));
                gold.push(GoldPair {
                    group: g,
                    a_sentences: vec![g],
                    b_sentences: vec![g],
                    a_texts: vec![a[g].clone()],
                    b_texts: vec![b[g].clone()],
                });
            }
            out.push(BenchmarkRecord {
                schema_version: SCHEMA_VERSION,
                id,
                source: "stub".into(),
                conflict_type: Some(t),
                n_conflicts: n,
                seed_triplets: groups.iter().flat_map(|g| g.original.clone()).collect(),
                subgraph: Vec::new(),
                context_a: a.join(" "),
                context_b: b.join(" "),
                gold,
                groups,
                loc_eligible: true,
                domains: vec![Domain::Geography],
                relations: vec!["P150".into()],
                free_text_relations: Vec::new(),
                coverage: Vec::new(),
                provenance: RecordProvenance {
                    generator: Some(Generator::Rule),
                    model_ids: Vec::new(),
                    prompt_hashes: Vec::new(),
                    review_decisions: Vec::new(),
                    pipeline_version: crate::PIPELINE_VERSION.into(),
                },
                extra: Map::new(),
            });
        }
    }
    out
}
