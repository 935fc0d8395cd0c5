//! Converts third-party contradiction datasets into benchmark records so the
//! same scoring code runs over them. Adapted records carry one conflict and
//! no conflict type; they are LOC-eligible only when the gold sentences can
//! be found in both contexts.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{BenchmarkRecord, RecordProvenance, SCHEMA_VERSION};
use crate::text::{normalize, split_sentences};
use crate::verbalize::GoldPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalSource {
    Econ,
    WikiContradict,
}

impl ExternalSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ExternalSource::Econ => "econ",
            ExternalSource::WikiContradict => "wikicontradict",
        }
    }

    /// Field names are best guesses at the published files and can be
    /// overridden per run.
    pub fn default_mapping(self) -> AdapterMapping {
        match self {
            ExternalSource::Econ => AdapterMapping {
                id: Some("id".into()),
                context_a: "evidence_1".into(),
                context_b: "evidence_2".into(),
                gold_a: None,
                gold_b: None,
                id_prefix: "econ".into(),
                dedup: true,
            },
            ExternalSource::WikiContradict => AdapterMapping {
                id: Some("question_ID".into()),
                context_a: "paragraph_A".into(),
                context_b: "paragraph_B".into(),
                gold_a: Some("paragraph_A_clean".into()),
                gold_b: Some("paragraph_B_clean".into()),
                id_prefix: "wikicontradict".into(),
                dedup: true,
            },
        }
    }
}

impl std::str::FromStr for ExternalSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "econ" => Ok(ExternalSource::Econ),
            "wikicontradict" => Ok(ExternalSource::WikiContradict),
            _ => Err(format!("unknown external source {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdapterMapping {
    /// Row id field; the 1-based row number when absent.
    pub id: Option<String>,
    pub context_a: String,
    pub context_b: String,
    /// Fields holding the conflicting sentence of each side.
    pub gold_a: Option<String>,
    pub gold_b: Option<String>,
    pub id_prefix: String,
    /// Drop rows whose normalized context pair was already seen.
    pub dedup: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    Jsonl,
    Json,
    Csv,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.trim_end_matches(".gz");
        let ext = name.rsplit_once('.')?.1;
        match ext {
            "jsonl" | "ndjson" => Some(InputFormat::Jsonl),
            "json" => Some(InputFormat::Json),
            "csv" => Some(InputFormat::Csv),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based data row, header excluded.
    pub row: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub records: Vec<BenchmarkRecord>,
    pub errors: Vec<RowError>,
    pub duplicates: usize,
    pub loc_eligible: usize,
}

type Row = Result<Map<String, Value>, String>;

fn parse_rows(input: &str, format: InputFormat) -> Result<Vec<Row>, String> {
    match format {
        InputFormat::Jsonl => Ok(input
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| match serde_json::from_str::<Value>(l) {
                Ok(Value::Object(m)) => Ok(m),
                Ok(_) => Err("row is not a JSON object".to_string()),
                Err(e) => Err(format!("invalid JSON: {e}")),
            })
            .collect()),
        InputFormat::Json => {
            let v: Value = serde_json::from_str(input).map_err(|e| format!("invalid JSON: {e}"))?;
            let rows = match v {
                Value::Array(rows) => rows,
                Value::Object(mut m) => match m.remove("data") {
                    Some(Value::Array(rows)) => rows,
                    _ => return Err("expected an array or an object with a \"data\" array".into()),
                },
                _ => return Err("expected an array of rows".into()),
            };
            Ok(rows
                .into_iter()
                .map(|r| match r {
                    Value::Object(m) => Ok(m),
                    _ => Err("row is not a JSON object".to_string()),
                })
                .collect())
        }
        InputFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(input.as_bytes());
            let headers = reader.headers().map_err(|e| format!("unreadable header: {e}"))?.clone();
            Ok(reader
                .records()
                .map(|r| {
                    let r = r.map_err(|e| e.to_string())?;
                    Ok(headers.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), Value::from(v))).collect())
                })
                .collect())
        }
    }
}

fn text_field(row: &Map<String, Value>, field: &str) -> Option<String> {
    match row.get(field)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Sentences of `context` that contain the gold text or are contained in it.
fn locate(context: &str, gold: &str) -> Vec<usize> {
    let g = normalize(gold);
    if g.is_empty() {
        return Vec::new();
    }
    split_sentences(context)
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            let n = normalize(&s.text);
            !n.is_empty() && (n.contains(&g) || g.contains(&n))
        })
        .map(|(i, _)| i)
        .collect()
}

fn gold_pair(a: &str, b: &str, ga: &str, gb: &str) -> Option<GoldPair> {
    let (ia, ib) = (locate(a, ga), locate(b, gb));
    if ia.is_empty() || ib.is_empty() {
        return None;
    }
    let sa = split_sentences(a);
    let sb = split_sentences(b);
    Some(GoldPair {
        group: 0,
        a_texts: ia.iter().map(|&i| sa[i].text.clone()).collect(),
        b_texts: ib.iter().map(|&i| sb[i].text.clone()).collect(),
        a_sentences: ia,
        b_sentences: ib,
    })
}

/// A malformed file is an error. A malformed row is recorded in the report
/// and skipped.
pub fn adapt_external(
    source: ExternalSource,
    input: &str,
    format: InputFormat,
    mapping: &AdapterMapping,
) -> Result<AdaptReport, String> {
    let rows = parse_rows(input, format)?;
    let mut report = AdaptReport::default();
    let mut seen_pairs = HashSet::new();
    let mut seen_ids = HashSet::new();
    for (i, row) in rows.into_iter().enumerate() {
        let n = i + 1;
        let row = match row {
            Ok(r) => r,
            Err(message) => {
                report.errors.push(RowError { row: n, message });
                continue;
            }
        };
        let mut missing = Vec::new();
        let a = text_field(&row, &mapping.context_a).filter(|s| !s.trim().is_empty());
        let b = text_field(&row, &mapping.context_b).filter(|s| !s.trim().is_empty());
        if a.is_none() {
            missing.push(mapping.context_a.as_str());
        }
        if b.is_none() {
            missing.push(mapping.context_b.as_str());
        }
        let (Some(a), Some(b)) = (a, b) else {
            report.errors.push(RowError { row: n, message: format!("missing or empty field(s): {}", missing.join(", ")) });
            continue;
        };
        if mapping.dedup && !seen_pairs.insert((normalize(&a), normalize(&b))) {
            report.duplicates += 1;
            continue;
        }
        let raw_id = mapping.id.as_deref().and_then(|f| text_field(&row, f)).unwrap_or_else(|| n.to_string());
        let mut id = format!("{}-{raw_id}", mapping.id_prefix);
        if !seen_ids.insert(id.clone()) {
            id = format!("{id}-r{n}");
            seen_ids.insert(id.clone());
        }
        let gold_texts = mapping
            .gold_a
            .as_deref()
            .zip(mapping.gold_b.as_deref())
            .and_then(|(fa, fb)| text_field(&row, fa).zip(text_field(&row, fb)));
        let gold: Vec<GoldPair> = gold_texts.and_then(|(ga, gb)| gold_pair(&a, &b, &ga, &gb)).into_iter().collect();
        let loc_eligible = !gold.is_empty();
        report.loc_eligible += usize::from(loc_eligible);
        report.records.push(BenchmarkRecord {
            schema_version: SCHEMA_VERSION,
            id,
            source: source.as_str().into(),
            conflict_type: None,
            n_conflicts: 1,
            seed_triplets: Vec::new(),
            groups: Vec::new(),
            subgraph: Vec::new(),
            context_a: a,
            context_b: b,
            gold,
            loc_eligible,
            domains: Vec::new(),
            relations: Vec::new(),
            free_text_relations: Vec::new(),
            coverage: Vec::new(),
            provenance: RecordProvenance {
                generator: None,
                model_ids: Vec::new(),
                prompt_hashes: Vec::new(),
                review_decisions: Vec::new(),
                pipeline_version: crate::PIPELINE_VERSION.into(),
            },
            extra: Map::new(),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{read_records, write_records};
    use crate::registry::RelationRegistry;
    use serde_json::json;

    fn econ_fixture() -> String {
        let mut out = String::new();
        for i in 0..168 {
            let row = if i == 40 {
                json!({"id": i, "evidence_1": "Rates rose in 2019.", "evidence_2": ""})
            } else if i == 77 {
                json!({"id": 76, "evidence_1": "Claim 76 was true. Inflation fell by 76 percent.", "evidence_2": "Claim 76 was true. Inflation rose by 76 percent."})
            } else {
                json!({
                    "id": i,
                    "evidence_1": format!("Claim {i} was true. Inflation fell by {i} percent."),
                    "evidence_2": format!("Claim {i} was true. Inflation rose by {i} percent."),
                })
            };
            out.push_str(&row.to_string());
            out.push('\n');
        }
        out
    }

    fn wiki_fixture() -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["question_ID", "paragraph_A", "paragraph_B", "paragraph_A_clean", "paragraph_B_clean"]).unwrap();
        for i in 0..103 {
            let a = format!("The bridge {i} opened to traffic. It was completed in {}.", 1900 + i);
            let b = format!("The bridge {i} opened to traffic. It was completed in {}.", 1950 + i);
            let (ga, gb) = if i % 10 == 3 {
                ("no such sentence".to_string(), "none here either".to_string())
            } else {
                (format!("completed in {}", 1900 + i), format!("completed in {}", 1950 + i))
            };
            w.write_record([format!("q{i}"), a, b, ga, gb]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    #[test]
    fn econ_rows() {
        let m = ExternalSource::Econ.default_mapping();
        let r = adapt_external(ExternalSource::Econ, &econ_fixture(), InputFormat::Jsonl, &m).unwrap();
        assert_eq!(r.errors, vec![RowError { row: 41, message: "missing or empty field(s): evidence_2".into() }]);
        assert_eq!(r.duplicates, 1);
        assert_eq!(r.records.len(), 166);
        assert_eq!(r.loc_eligible, 0);
        assert!(r.records.iter().all(|x| x.n_conflicts == 1 && x.conflict_type.is_none() && !x.loc_eligible));
        assert_eq!(r.records[0].id, "econ-0");
        let reg = RelationRegistry::default();
        let mut buf = Vec::new();
        write_records(&r.records, &mut buf, &reg).unwrap();
        assert_eq!(read_records(buf.as_slice()).unwrap(), r.records);
    }

    #[test]
    fn wikicontradict_rows() {
        let m = ExternalSource::WikiContradict.default_mapping();
        let r = adapt_external(ExternalSource::WikiContradict, &wiki_fixture(), InputFormat::Csv, &m).unwrap();
        assert!(r.errors.is_empty());
        assert_eq!(r.records.len(), 103);
        assert_eq!(r.loc_eligible, 103 - 10);
        let first = &r.records[0];
        assert_eq!(first.id, "wikicontradict-q0");
        assert_eq!(first.gold[0].a_sentences, vec![1]);
        assert_eq!(first.gold[0].b_texts, vec!["It was completed in 1950.".to_string()]);
        assert!(!r.records[3].loc_eligible);
        for rec in &r.records {
            rec.validate(&RelationRegistry::default()).unwrap();
        }
    }

    #[test]
    fn malformed_inputs() {
        let m = ExternalSource::Econ.default_mapping();
        let bad = "{\"id\":1,\"evidence_1\":\"x.\",\"evidence_2\":\"y.\"}\nnot json\n[1]\n";
        let r = adapt_external(ExternalSource::Econ, bad, InputFormat::Jsonl, &m).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.errors.iter().map(|e| e.row).collect::<Vec<_>>(), vec![2, 3]);
        assert!(adapt_external(ExternalSource::Econ, "{\"rows\": 1}", InputFormat::Json, &m).is_err());
        let wrapped = json!({"data": [{"evidence_1": "x.", "evidence_2": "y."}]}).to_string();
        let r = adapt_external(ExternalSource::Econ, &wrapped, InputFormat::Json, &m).unwrap();
        assert_eq!(r.records[0].id, "econ-1");
        assert_eq!(InputFormat::from_path(Path::new("a/b.jsonl.gz")), Some(InputFormat::Jsonl));
        assert_eq!("wiki-contradict".parse::<ExternalSource>(), Ok(ExternalSource::WikiContradict));
    }
}
