//! Stage runners behind the command line. Each stage reads the previous
//! stage's files from the output directory and writes its own:
//!
//! | stage     | reads                      | writes                                   |
//! |-----------|----------------------------|------------------------------------------|
//! | ingest    | triplet and alias TSVs     | `graph.kgc`, `ingest_report.json`        |
//! | extract   | `graph.kgc`                | `subgraphs.jsonl`                        |
//! | generate  | `subgraphs.jsonl`          | `specs.jsonl`, `generate_errors.jsonl`   |
//! | verbalize | `specs.jsonl`              | `drafts.jsonl`                           |
//! | verify    | `drafts.jsonl`             | `records.jsonl`, `flagged.jsonl`, `rejected.jsonl` |
//! | evaluate  | `records.jsonl`            | `scores.jsonl`                           |
//! | report    | `scores.jsonl`             | `report.json`                            |
//!
//! `probe`, `quality` and `adapt` are side stages over records or external
//! files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::conflict::{
    assemble_instance, build_generation_prompt, generate_fallback_instance, parse_triplet_output, resolve_surface_triples,
    ConflictSpec, ConflictType, FewShotBank, GenerationMode, Generator, HopClass, PerturbationGroup, Provenance,
    SingleHopMode,
};
use crate::dataset::{
    adapt_external, open_maybe_gz, read_records_path, stats, write_records_path, AdapterMapping, BenchmarkRecord,
    CoverageDigest, ExternalSource, InputFormat, RecordProvenance, SCHEMA_VERSION,
};
use crate::eval::{
    aggregate, build_detection_prompt, length_bins, mean_rating, parse_detection_response, probe_parametric, rate_quality,
    score_instance, AggregateRow, Aggregation, DiffBaseline, GroupKey, ParametricClass, ProbeConfig, ProbeOutcome,
    QualityDimension, ScoreSheet, SheetKeys, Strategy, BASELINE_MODEL, DEFAULT_ALIGNMENT_THRESHOLD,
};
use crate::extract::{extract_many, task_rng, validate_constraints, ExtractionConfig, Subgraph};
use crate::fact::Fact;
use crate::kg::{cache, apply_filters, load_graph, FilterConfig, KnowledgeGraph, Triplet};
use crate::llm::{write_atomic, Completer, Gateway, GatewayConfig, GatewayMode, HttpTransport, ModelRequest, Transport};
use crate::registry::RelationRegistry;
use crate::templates::Templates;
use crate::text::sha256_hex;
use crate::verbalize::{
    build_conversion_prompt, build_verification_prompt, coverage_check, locate_gold_sentences, parse_verdict,
    template_verbalize, ContextSource, CoverageConfig, CoverageReport, Verdict, VerbalizeError, VerbalizedContext,
};

/// Every problem found while validating a configuration.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration: {}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub triplets: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    /// Relation phrase table; the built-in one when unset.
    pub registry: Option<PathBuf>,
    /// Directory of prompt template overrides.
    pub templates_dir: Option<PathBuf>,
    pub few_shot_bank: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            triplets: None,
            entities: None,
            relations: None,
            registry: None,
            templates_dir: None,
            few_shot_bank: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractStage {
    #[serde(flatten)]
    pub config: ExtractionConfig,
    /// Subgraphs to extract.
    pub count: usize,
}

impl Default for ExtractStage {
    fn default() -> Self {
        ExtractStage { config: ExtractionConfig::default(), count: 64 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Rule,
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateStage {
    pub generator: GeneratorKind,
    pub single_hop_mode: SingleHopMode,
    /// Conflict types assigned to subgraphs in turn, as keys such as
    /// `multi_hop_2`.
    pub types: Vec<String>,
    pub model: String,
}

impl Default for GenerateStage {
    fn default() -> Self {
        GenerateStage {
            generator: GeneratorKind::Rule,
            single_hop_mode: SingleHopMode::Random,
            types: ConflictType::all().iter().map(ConflictType::key).collect(),
            model: String::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerbalizerKind {
    #[default]
    Template,
    Model,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerbalizeStage {
    pub verbalizer: VerbalizerKind,
    pub model: String,
    pub coverage: CoverageConfig,
    /// Also ask the verifier model about template contexts.
    pub verify_templates: bool,
}

impl Default for VerbalizeStage {
    fn default() -> Self {
        VerbalizeStage { verbalizer: VerbalizerKind::Template, model: String::new(), coverage: CoverageConfig::default(), verify_templates: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub models: Vec<String>,
    pub strategies: Vec<Strategy>,
    pub alignment_threshold: f64,
    pub aggregation: Aggregation,
    pub length_bins: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for EvalStage {
    fn default() -> Self {
        EvalStage {
            models: vec![BASELINE_MODEL.to_string()],
            strategies: vec![Strategy::MultiStep],
            alignment_threshold: DEFAULT_ALIGNMENT_THRESHOLD,
            aggregation: Aggregation::AllRuns,
            length_bins: 4,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    pub paths: PathsConfig,
    pub filter: FilterConfig,
    pub extract: ExtractStage,
    pub generate: GenerateStage,
    pub verbalize: VerbalizeStage,
    pub gateway: GatewayConfig,
    pub eval: EvalStage,
    pub probe: ProbeConfig,
}

impl RunConfig {
    /// Parse a TOML file; relative paths are taken from the file's directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for path in [&mut p.triplets, &mut p.entities, &mut p.relations, &mut p.registry, &mut p.templates_dir, &mut p.few_shot_bank].into_iter().flatten() {
            fix(path);
        }
        fix(&mut p.out_dir);
    }

    /// All problems at once.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let p = &self.paths;
        for (name, opt) in [
            ("paths.triplets", &p.triplets),
            ("paths.entities", &p.entities),
            ("paths.relations", &p.relations),
            ("paths.registry", &p.registry),
            ("paths.templates_dir", &p.templates_dir),
            ("paths.few_shot_bank", &p.few_shot_bank),
        ] {
            if let Some(path) = opt {
                if !path.exists() {
                    errs.push(format!("{name}: {} does not exist", path.display()));
                }
            }
        }
        if let Err(e) = self.filter.validate() {
            errs.push(format!("filter: {e}"));
        }
        if let Err(e) = self.extract.config.validate() {
            errs.push(format!("extract: {e}"));
        }
        if self.extract.count == 0 {
            errs.push("extract.count must be positive".into());
        }
        if self.generate.types.is_empty() {
            errs.push("generate.types is empty".into());
        }
        for t in &self.generate.types {
            if t.parse::<ConflictType>().is_err() {
                errs.push(format!("generate.types: unknown conflict type {t:?}"));
            }
        }
        if self.generate.generator == GeneratorKind::Model && self.generate.model.is_empty() {
            errs.push("generate.model is required with the model generator".into());
        }
        if self.verbalize.verbalizer == VerbalizerKind::Model && self.verbalize.model.is_empty() {
            errs.push("verbalize.model is required with the model verbalizer".into());
        }
        if !(0.0..=1.0).contains(&self.verbalize.coverage.min_subgraph_coverage) {
            errs.push("verbalize.coverage.min_subgraph_coverage must be in [0, 1]".into());
        }
        if self.eval.models.is_empty() {
            errs.push("eval.models is empty".into());
        }
        if self.eval.strategies.is_empty() {
            errs.push("eval.strategies is empty".into());
        }
        if !(self.eval.alignment_threshold > 0.0 && self.eval.alignment_threshold <= 1.0) {
            errs.push("eval.alignment_threshold must be in (0, 1]".into());
        }
        if self.eval.length_bins == 0 {
            errs.push("eval.length_bins must be positive".into());
        }
        if self.probe.n_trials == 0 || self.probe.known_min > self.probe.n_trials || self.probe.unknown_max >= self.probe.known_min {
            errs.push("probe: need unknown_max < known_min <= n_trials".into());
        }
        if self.gateway.max_in_flight == 0 || self.gateway.max_attempts == 0 {
            errs.push("gateway: max_in_flight and max_attempts must be positive".into());
        }
        if self.workers == Some(0) {
            errs.push("workers must be positive".into());
        }
        errs
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.out_dir.join(name)
    }

    pub fn registry(&self) -> Result<RelationRegistry> {
        match &self.paths.registry {
            Some(p) => Ok(RelationRegistry::from_path(p)?),
            None => Ok(RelationRegistry::default()),
        }
    }

    pub fn templates(&self) -> Result<Templates> {
        match &self.paths.templates_dir {
            Some(d) => Templates::with_overrides(d).with_context(|| format!("templates in {}", d.display())),
            None => Ok(Templates::default()),
        }
    }

    pub fn few_shot_bank(&self) -> Result<FewShotBank> {
        match &self.paths.few_shot_bank {
            Some(p) => FewShotBank::read_jsonl(open_maybe_gz(p)?).map_err(|e| anyhow!("{}: {e}", p.display())),
            None => Ok(FewShotBank::default()),
        }
    }

    /// The gateway for `model`. The offline baseline answers locally; other
    /// models reach the configured endpoint unless replaying.
    pub fn gateway(&self, model: &str) -> Result<Gateway> {
        let transport: Option<Arc<dyn Transport>> = if model == BASELINE_MODEL {
            Some(Arc::new(DiffBaseline))
        } else if self.gateway.mode == GatewayMode::Replay {
            None
        } else {
            Some(Arc::new(HttpTransport::from_env(Duration::from_secs(self.gateway.timeout_secs))?))
        };
        let mut gcfg = self.gateway.clone();
        if gcfg.cache_dir.is_relative() {
            gcfg.cache_dir = self.paths.out_dir.join(&gcfg.cache_dir);
        }
        Ok(Gateway::new(gcfg, transport)?)
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf).with_context(|| format!("writing {}", path.display()))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = open_maybe_gz(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut open_maybe_gz(path).with_context(|| format!("opening {}", path.display()))?, &mut bytes)?;
    Ok(bytes)
}

// ---------------------------------------------------------------- ingest

/// Load and filter the input graph, then cache it in the output directory.
pub fn ingest(cfg: &RunConfig) -> Result<Value> {
    let missing: Vec<&str> = [("paths.triplets", &cfg.paths.triplets), ("paths.entities", &cfg.paths.entities), ("paths.relations", &cfg.paths.relations)]
        .iter()
        .filter(|(_, p)| p.is_none())
        .map(|(n, _)| *n)
        .collect();
    if !missing.is_empty() {
        return Err(ConfigErrors(missing.iter().map(|n| format!("{n} is required for ingest")).collect()).into());
    }
    let inputs: Vec<Vec<u8>> = [&cfg.paths.triplets, &cfg.paths.entities, &cfg.paths.relations]
        .iter()
        .map(|p| read_input(p.as_ref().expect("checked above")))
        .collect::<Result<_>>()?;
    let slices: Vec<&[u8]> = inputs.iter().map(Vec::as_slice).collect();
    let key = cache::cache_key(&slices, &cfg.filter);
    let path = cfg.out("graph.kgc");
    if let Some(g) = cache::load(&path, &key)? {
        let summary = json!({"stage": "ingest", "cached": true, "entities": g.entity_count(), "triplets": g.triplet_count()});
        return Ok(summary);
    }
    let (raw, report) = load_graph(slices[0], slices[1], slices[2])?;
    let graph = apply_filters(&raw, &cfg.filter)?;
    cache::store(&path, &graph, &key)?;
    fs::write(cfg.out("graph.key"), &key)?;
    let summary = json!({
        "stage": "ingest",
        "cached": false,
        "loaded": {"entities": raw.entity_count(), "triplets": raw.triplet_count()},
        "entities": graph.entity_count(),
        "triplets": graph.triplet_count(),
        "report": report,
    });
    write_json(&cfg.out("ingest_report.json"), &summary)?;
    Ok(summary)
}

/// The graph written by `ingest`, ingesting first when it is missing.
pub fn stage_graph(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    let key_path = cfg.out("graph.key");
    if !key_path.exists() {
        ingest(cfg)?;
    }
    let key = fs::read_to_string(&key_path).with_context(|| format!("reading {}", key_path.display()))?;
    cache::load(&cfg.out("graph.kgc"), key.trim())?.ok_or_else(|| anyhow!("graph cache is stale; rerun ingest"))
}

// --------------------------------------------------------------- extract

pub fn extract(cfg: &RunConfig) -> Result<Value> {
    let graph = stage_graph(cfg)?;
    let registry = cfg.registry()?;
    let mut ecfg = cfg.extract.config.clone();
    ecfg.rng_seed = cfg.seed;
    let subgraphs = extract_many(&graph, &registry, &ecfg, cfg.extract.count)?;
    let violations: usize = subgraphs.iter().map(|s| validate_constraints(s, &ecfg).len()).sum();
    if violations > 0 {
        bail!("{violations} structural constraint violations in extracted subgraphs");
    }
    let path = cfg.out("subgraphs.jsonl");
    write_jsonl(&path, &subgraphs)?;
    Ok(json!({
        "stage": "extract",
        "subgraphs": subgraphs.len(),
        "edges": subgraphs.iter().map(|s| s.edges.len()).sum::<usize>(),
        "digest": sha256_hex(&fs::read(&path)?),
    }))
}

// -------------------------------------------------------------- generate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecLine {
    pub id: String,
    pub spec: ConflictSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub index: usize,
    pub id: String,
    pub error: String,
}

pub fn instance_id(index: usize) -> String {
    format!("kc-{index:05}")
}

/// One group from a model, for `original` under `mode`.
fn model_group(
    cfg: &RunConfig,
    ctx: &GenerateContext,
    original: &Triplet,
    subgraph: &Subgraph,
    mode: GenerationMode,
    prov: &mut Provenance,
) -> Result<PerturbationGroup> {
    let prompt = build_generation_prompt(&ctx.templates, original, subgraph, &ctx.bank, mode, ctx.graph.aliases(), &ctx.registry)?;
    let resp = ctx.gateway.as_ref().expect("model generator has a gateway").complete(&ModelRequest::new(&cfg.generate.model, &prompt.text))?;
    let triples = parse_triplet_output(&resp.text)?;
    let facts = resolve_surface_triples(&triples, ctx.graph.aliases(), &ctx.registry);
    let group = PerturbationGroup::from_model(original.clone(), facts)?;
    prov.prompt_hashes.push(prompt.hash);
    prov.few_shot_ids.extend(prompt.demo_ids);
    prov.zero_shot |= prompt.zero_shot;
    Ok(group)
}

struct GenerateContext {
    graph: KnowledgeGraph,
    registry: RelationRegistry,
    templates: Templates,
    bank: FewShotBank,
    gateway: Option<Gateway>,
}

fn model_instance(cfg: &RunConfig, ctx: &GenerateContext, subgraph: &Subgraph, ctype: ConflictType) -> Result<ConflictSpec> {
    let mut prov = Provenance { generator: Generator::Model, model_id: Some(cfg.generate.model.clone()), ..Provenance::rule() };
    let mode = match ctype.hop {
        HopClass::MultiHop => GenerationMode::MultiHop,
        HopClass::SingleHop => GenerationMode::SingleHop,
    };
    let mut groups: Vec<PerturbationGroup> = Vec::new();
    let mut last_error = None;
    for original in &subgraph.edges {
        if groups.len() == usize::from(ctype.n) {
            break;
        }
        match model_group(cfg, ctx, original, subgraph, mode, &mut prov) {
            Ok(g) if (g.hop == HopClass::MultiHop) == (mode == GenerationMode::MultiHop) => {
                let mut trial = groups.clone();
                trial.push(g);
                match assemble_instance(subgraph, trial.clone(), prov.clone()) {
                    Ok(_) => groups = trial,
                    Err(e) => last_error = Some(e.to_string()),
                }
            }
            Ok(_) => last_error = Some(format!("model answered with the wrong hop class for {original}")),
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    if groups.len() < usize::from(ctype.n) {
        bail!("found {} of {} groups for {ctype}: {}", groups.len(), ctype.n, last_error.unwrap_or_default());
    }
    Ok(assemble_instance(subgraph, groups, prov)?)
}

pub fn generate(cfg: &RunConfig) -> Result<Value> {
    let subgraphs: Vec<Subgraph> = read_jsonl(&cfg.out("subgraphs.jsonl"))?;
    let types: Vec<ConflictType> =
        cfg.generate.types.iter().map(|t| t.parse().map_err(|e: String| anyhow!(e))).collect::<Result<_>>()?;
    let ctx = GenerateContext {
        graph: stage_graph(cfg)?,
        registry: cfg.registry()?,
        templates: cfg.templates()?,
        bank: cfg.few_shot_bank()?,
        gateway: match cfg.generate.generator {
            GeneratorKind::Model => Some(cfg.gateway(&cfg.generate.model)?),
            GeneratorKind::Rule => None,
        },
    };
    let results: Vec<Result<SpecLine, StageFailure>> = subgraphs
        .par_iter()
        .enumerate()
        .map(|(i, sg)| {
            let ctype = types[i % types.len()];
            let id = instance_id(i);
            let spec = match cfg.generate.generator {
                GeneratorKind::Rule => {
                    let mut rng = task_rng(cfg.seed.wrapping_add(1), i as u64);
                    generate_fallback_instance(&ctx.graph, sg, &ctx.registry, ctype, cfg.generate.single_hop_mode, &mut rng)
                        .map_err(anyhow::Error::from)
                }
                GeneratorKind::Model => model_instance(cfg, &ctx, sg, ctype),
            };
            spec.map(|spec| SpecLine { id: id.clone(), spec })
                .map_err(|e| StageFailure { index: i, id, error: format!("{ctype}: {e:#}") })
        })
        .collect();
    let (ok, failed) = split(results);
    write_jsonl(&cfg.out("specs.jsonl"), &ok)?;
    write_jsonl(&cfg.out("generate_errors.jsonl"), &failed)?;
    let mut by_type: BTreeMap<String, usize> = BTreeMap::new();
    for s in &ok {
        *by_type.entry(s.spec.conflict_type.key()).or_default() += 1;
    }
    Ok(json!({"stage": "generate", "specs": ok.len(), "infeasible": failed.len(), "by_type": by_type}))
}

fn split<T, E>(results: Vec<Result<T, E>>) -> (Vec<T>, Vec<E>) {
    let mut ok = Vec::new();
    let mut err = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => err.push(e),
        }
    }
    (ok, err)
}

// ------------------------------------------------------------- verbalize

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub id: String,
    pub spec: ConflictSpec,
    pub context_a: VerbalizedContext,
    pub context_b: VerbalizedContext,
    #[serde(default)]
    pub model_ids: Vec<String>,
    #[serde(default)]
    pub prompt_hashes: Vec<String>,
}

/// Facts of the original context: the subgraph in discovery order.
pub fn facts_a(spec: &ConflictSpec) -> Vec<Fact> {
    spec.subgraph.edges.iter().cloned().map(Fact::from).collect()
}

/// Facts of the conflicting context: each perturbed triplet is replaced in
/// place by its group's replacement facts.
pub fn facts_b(spec: &ConflictSpec) -> Vec<Fact> {
    let mut out = Vec::new();
    for t in &spec.subgraph.edges {
        match spec.groups.iter().find(|g| g.original.contains(t)) {
            Some(g) if g.original.first() == Some(t) => out.extend(g.replacement.iter().cloned()),
            Some(_) => {}
            None => out.push(Fact::from(t.clone())),
        }
    }
    out
}

pub fn verbalize(cfg: &RunConfig) -> Result<Value> {
    let specs: Vec<SpecLine> = read_jsonl(&cfg.out("specs.jsonl"))?;
    let graph = stage_graph(cfg)?;
    let registry = cfg.registry()?;
    let templates = cfg.templates()?;
    let gateway = match cfg.verbalize.verbalizer {
        VerbalizerKind::Model => Some(cfg.gateway(&cfg.verbalize.model)?),
        VerbalizerKind::Template => None,
    };
    let results: Vec<Result<Draft, StageFailure>> = specs
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let (fa, fb) = (facts_a(&line.spec), facts_b(&line.spec));
            let fail = |e: String| StageFailure { index: i, id: line.id.clone(), error: e };
            let mut draft = Draft {
                id: line.id.clone(),
                spec: line.spec.clone(),
                context_a: VerbalizedContext::from_text("", ContextSource::Template),
                context_b: VerbalizedContext::from_text("", ContextSource::Template),
                model_ids: Vec::new(),
                prompt_hashes: line.spec.provenance.prompt_hashes.clone(),
            };
            if let Some(m) = &line.spec.provenance.model_id {
                draft.model_ids.push(m.clone());
            }
            match &gateway {
                None => {
                    // Same stream for both sides, so unchanged facts pair up alike.
                    let seed = cfg.seed.wrapping_add(2);
                    draft.context_a = template_verbalize(&fa, graph.aliases(), &registry, &mut task_rng(seed, i as u64));
                    draft.context_b = template_verbalize(&fb, graph.aliases(), &registry, &mut task_rng(seed, i as u64));
                }
                Some(gw) => {
                    let mut side = |facts: &[Fact]| -> Result<VerbalizedContext, String> {
                        let prompt = build_conversion_prompt(&templates, facts, graph.aliases(), &registry).map_err(|e| e.to_string())?;
                        let resp = gw.complete(&ModelRequest::new(&cfg.verbalize.model, &prompt)).map_err(|e| e.to_string())?;
                        draft.prompt_hashes.push(sha256_hex(prompt.as_bytes()));
                        Ok(VerbalizedContext::from_text(resp.text.trim(), ContextSource::Model))
                    };
                    let a = side(&fa).map_err(fail)?;
                    let b = side(&fb).map_err(fail)?;
                    draft.context_a = a;
                    draft.context_b = b;
                    draft.model_ids.push(cfg.verbalize.model.clone());
                }
            }
            Ok(draft)
        })
        .collect();
    let (ok, failed) = split(results);
    write_jsonl(&cfg.out("drafts.jsonl"), &ok)?;
    write_jsonl(&cfg.out("verbalize_errors.jsonl"), &failed)?;
    Ok(json!({"stage": "verbalize", "drafts": ok.len(), "failed": failed.len()}))
}

// ---------------------------------------------------------------- verify

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub id: String,
    pub reasons: Vec<String>,
    pub coverage: Vec<CoverageReport>,
}

/// Assemble the stored record from a verified draft.
pub fn build_record(draft: &Draft, reports: &[CoverageReport], gold: Vec<crate::verbalize::GoldPair>) -> BenchmarkRecord {
    let spec = &draft.spec;
    let mut relations: Vec<String> =
        spec.groups.iter().flat_map(|g| &g.original).map(|t| t.relation.to_string()).collect();
    relations.sort();
    relations.dedup();
    let mut rec = BenchmarkRecord {
        schema_version: SCHEMA_VERSION,
        id: draft.id.clone(),
        source: "kconflict".into(),
        conflict_type: Some(spec.conflict_type),
        n_conflicts: spec.groups.len(),
        seed_triplets: spec.groups.iter().flat_map(|g| g.original.clone()).collect(),
        groups: spec.groups.clone(),
        subgraph: spec.subgraph.edges.clone(),
        context_a: draft.context_a.text.clone(),
        context_b: draft.context_b.text.clone(),
        loc_eligible: !gold.is_empty(),
        gold,
        domains: spec.subgraph.domains.iter().copied().collect(),
        relations,
        free_text_relations: Vec::new(),
        coverage: reports.iter().map(CoverageDigest::from).collect(),
        provenance: RecordProvenance {
            generator: Some(spec.provenance.generator),
            model_ids: draft.model_ids.clone(),
            prompt_hashes: draft.prompt_hashes.clone(),
            review_decisions: Vec::new(),
            pipeline_version: crate::PIPELINE_VERSION.into(),
        },
        extra: Map::new(),
    };
    rec.free_text_relations = rec.free_text_in_groups();
    rec
}

enum Verified {
    Admitted(BenchmarkRecord),
    Flagged(BenchmarkRecord),
    Rejected(Rejection),
}

fn verify_one(
    cfg: &RunConfig,
    draft: &Draft,
    graph: &KnowledgeGraph,
    registry: &RelationRegistry,
    templates: &Templates,
    verifier: Option<&Gateway>,
) -> Result<Verified> {
    let spec = &draft.spec;
    let originals: Vec<Fact> = spec.groups.iter().flat_map(|g| g.original.iter().cloned().map(Fact::from)).collect();
    let replacements: Vec<Fact> = spec.groups.iter().flat_map(|g| g.replacement.iter().cloned()).collect();
    let ccfg = &cfg.verbalize.coverage;
    let mut reports = Vec::new();
    let mut reasons = Vec::new();
    for (side, ctx, conflict, all) in
        [('A', &draft.context_a, &originals, facts_a(spec)), ('B', &draft.context_b, &replacements, facts_b(spec))]
    {
        let mut report = coverage_check(conflict, &all, ctx, graph.aliases(), registry, ccfg);
        let ask = ctx.source == ContextSource::Model || cfg.verbalize.verify_templates;
        if let (true, Some(gw), false) = (ask, verifier, ctx.is_empty()) {
            let prompt = build_verification_prompt(templates, &all, &ctx.text, graph.aliases(), registry)?;
            let resp = gw.complete(&ModelRequest::new(&cfg.verbalize.model, &prompt))?;
            report.verifier_verdict = parse_verdict(&resp.text).unwrap_or_else(|e| {
                log::warn!("{}: {e}", draft.id);
                Verdict::YesError
            });
        }
        if !report.admissible(ccfg, ctx.source) {
            reasons.push(format!(
                "context {side}: conflict covered {}, subgraph coverage {:.3}, verdict {:?}",
                report.conflict_covered, report.subgraph_coverage_ratio, report.verifier_verdict
            ));
        }
        reports.push(report);
    }
    if !reasons.is_empty() {
        return Ok(Verified::Rejected(Rejection { id: draft.id.clone(), reasons, coverage: reports }));
    }
    match locate_gold_sentences(&draft.context_a, &draft.context_b, &spec.groups, graph.aliases(), registry, ccfg) {
        Ok(gold) => Ok(Verified::Admitted(build_record(draft, &reports, gold))),
        Err(e @ (VerbalizeError::Unlocatable { .. } | VerbalizeError::IdenticalContexts)) => {
            let mut rec = build_record(draft, &reports, Vec::new());
            rec.extra.insert("review_flag".into(), Value::from(e.to_string()));
            Ok(Verified::Flagged(rec))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn verify(cfg: &RunConfig) -> Result<Value> {
    let drafts: Vec<Draft> = read_jsonl(&cfg.out("drafts.jsonl"))?;
    let graph = stage_graph(cfg)?;
    let registry = cfg.registry()?;
    let templates = cfg.templates()?;
    let needs_verifier = drafts.iter().any(|d| d.context_a.source == ContextSource::Model) || cfg.verbalize.verify_templates;
    let verifier = if needs_verifier && !cfg.verbalize.model.is_empty() { Some(cfg.gateway(&cfg.verbalize.model)?) } else { None };
    let results: Vec<Result<Verified, StageFailure>> = drafts
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            verify_one(cfg, d, &graph, &registry, &templates, verifier.as_ref())
                .map_err(|e| StageFailure { index: i, id: d.id.clone(), error: format!("{e:#}") })
        })
        .collect();
    let (ok, failed) = split(results);
    let (mut admitted, mut flagged, mut rejected) = (Vec::new(), Vec::new(), Vec::new());
    for v in ok {
        match v {
            Verified::Admitted(r) => admitted.push(r),
            Verified::Flagged(r) => flagged.push(r),
            Verified::Rejected(r) => rejected.push(r),
        }
    }
    write_records_path(&admitted, &cfg.out("records.jsonl"), &registry)?;
    write_records_path(&flagged, &cfg.out("flagged.jsonl"), &registry)?;
    write_jsonl(&cfg.out("rejected.jsonl"), &rejected)?;
    write_jsonl(&cfg.out("verify_errors.jsonl"), &failed)?;
    let full = admitted
        .iter()
        .filter(|r| r.coverage.iter().all(|c| c.conflict_covered && c.subgraph_coverage_ratio == 1.0))
        .count();
    let summary = json!({
        "stage": "verify",
        "admitted": admitted.len(),
        "flagged": flagged.len(),
        "rejected": rejected.len(),
        "errors": failed.len(),
        "fully_covered": full,
        "stats": stats(&admitted),
    });
    if !failed.is_empty() {
        return Err(StageErrors { summary, errors: failed.into_iter().map(|f| format!("{}: {}", f.id, f.error)).collect() }.into());
    }
    Ok(summary)
}

/// A stage finished but some items failed; the summary is still useful.
#[derive(Debug)]
pub struct StageErrors {
    pub summary: Value,
    pub errors: Vec<String>,
}

impl std::fmt::Display for StageErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} item(s) failed", self.errors.len())
    }
}

impl std::error::Error for StageErrors {}

// -------------------------------------------------------------- evaluate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeLine {
    pub instance_id: String,
    pub model: String,
    pub triplet: Triplet,
    pub outcome: ProbeOutcome,
}

pub fn evaluate(cfg: &RunConfig, records_path: Option<&Path>) -> Result<Value> {
    let path = records_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("records.jsonl"));
    let records = read_records_path(&path)?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    let templates = cfg.templates()?;
    let lengths: Vec<(&str, usize)> = records.iter().map(|r| (r.id.as_str(), r.context_tokens())).collect();
    let bins = length_bins(&lengths, cfg.eval.length_bins)?;
    let probes: HashMap<(String, String), ParametricClass> = if cfg.out("probe.jsonl").exists() {
        read_jsonl::<ProbeLine>(&cfg.out("probe.jsonl"))?
            .into_iter()
            .map(|p| ((p.instance_id, p.model), p.outcome.class))
            .collect()
    } else {
        HashMap::new()
    };
    let mut sheets = Vec::new();
    let mut errors = Vec::new();
    for model in &cfg.eval.models {
        let gw = cfg.gateway(model)?;
        for &strategy in &cfg.eval.strategies {
            let results: Vec<Result<ScoreSheet, String>> = records
                .par_iter()
                .zip(bins.par_iter())
                .map(|(rec, &bin)| {
                    let prompt = build_detection_prompt(&templates, &rec.context_a, &rec.context_b, strategy).map_err(|e| e.to_string())?;
                    let mut runs = Vec::with_capacity(3);
                    for run in 0..3 {
                        let mut req = ModelRequest::new(model, &prompt).with_run(run).with_temperature(cfg.eval.temperature);
                        req.max_tokens = cfg.eval.max_tokens;
                        let resp = gw.complete(&req).map_err(|e| format!("{} run {run}: {e}", rec.id))?;
                        runs.push(parse_detection_response(&resp.text, strategy));
                    }
                    let gold = (rec.loc_eligible && strategy == Strategy::MultiStep).then_some(rec.gold.as_slice());
                    let score = score_instance(&runs, gold, cfg.eval.alignment_threshold, cfg.eval.aggregation).map_err(|e| e.to_string())?;
                    Ok(ScoreSheet {
                        instance_id: rec.id.clone(),
                        model: model.clone(),
                        strategy,
                        id_score: score.id,
                        loc_score: score.loc,
                        runs,
                        keys: SheetKeys {
                            conflict_type: rec.conflict_type,
                            domains: rec.domains.clone(),
                            relations: rec.relations.clone(),
                            context_tokens: rec.context_tokens(),
                            length_bin: Some(bin),
                            parametric_split: probes.get(&(rec.id.clone(), model.clone())).copied(),
                        },
                    })
                })
                .collect();
            let (ok, failed) = split(results);
            sheets.extend(ok);
            errors.extend(failed);
        }
    }
    write_jsonl(&cfg.out("scores.jsonl"), &sheets)?;
    let overall: Vec<Value> = partitions(&sheets)
        .into_iter()
        .filter_map(|((model, strategy), part)| {
            let row = aggregate(&part, GroupKey::Overall).ok()?.remove(0);
            Some(json!({"model": model, "strategy": strategy, "n": row.n, "id": row.id, "loc": row.loc}))
        })
        .collect();
    let summary = json!({"stage": "evaluate", "sheets": sheets.len(), "errors": errors.len(), "overall": overall});
    if !errors.is_empty() {
        return Err(StageErrors { summary, errors }.into());
    }
    Ok(summary)
}

/// Sheets split by (model, strategy), in first-seen order.
fn partitions(sheets: &[ScoreSheet]) -> Vec<((String, Strategy), Vec<ScoreSheet>)> {
    let mut out: Vec<((String, Strategy), Vec<ScoreSheet>)> = Vec::new();
    for s in sheets {
        let key = (s.model.clone(), s.strategy);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(s.clone()),
            None => out.push((key, vec![s.clone()])),
        }
    }
    out
}

// ---------------------------------------------------------------- report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub model: String,
    pub strategy: Strategy,
    pub key: GroupKey,
    pub rows: Vec<AggregateRow>,
}

pub fn report_tables(sheets: &[ScoreSheet], keys: &[GroupKey]) -> Result<Vec<ReportTable>> {
    let mut out = Vec::new();
    for ((model, strategy), part) in partitions(sheets) {
        for &key in keys {
            out.push(ReportTable { model: model.clone(), strategy, key, rows: aggregate(&part, key)? });
        }
    }
    Ok(out)
}

/// Plain-text rendering, one block per table.
pub fn render_tables(tables: &[ReportTable]) -> String {
    let mut s = String::new();
    for t in tables {
        let strategy = match t.strategy {
            Strategy::Binary => "binary",
            Strategy::MultiStep => "multi_step",
        };
        s.push_str(&format!("## {} / {strategy} by {}\n", t.model, t.key.as_str()));
        s.push_str(&format!("{:<28} {:>6} {:>8} {:>8}\n", "group", "n", "ID %", "LOC %"));
        for r in &t.rows {
            let loc = r.loc.map(|l| format!("{l:.1}")).unwrap_or_else(|| "-".into());
            s.push_str(&format!("{:<28} {:>6} {:>8.1} {:>8}\n", r.group, r.n, r.id, loc));
        }
        s.push('\n');
    }
    s
}

pub fn report(cfg: &RunConfig, keys: &[GroupKey]) -> Result<(Value, String)> {
    let sheets: Vec<ScoreSheet> = read_jsonl(&cfg.out("scores.jsonl"))?;
    let tables = report_tables(&sheets, keys)?;
    let value = serde_json::to_value(&tables)?;
    write_json(&cfg.out("report.json"), &value)?;
    Ok((json!({"stage": "report", "tables": tables.len()}), render_tables(&tables)))
}

// ----------------------------------------------------------------- probe

pub fn probe(cfg: &RunConfig, records_path: Option<&Path>) -> Result<Value> {
    let path = records_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("records.jsonl"));
    let records = read_records_path(&path)?;
    let graph = stage_graph(cfg)?;
    let registry = cfg.registry()?;
    let models = if cfg.probe.model.is_empty() { cfg.eval.models.clone() } else { vec![cfg.probe.model.clone()] };
    let mut lines = Vec::new();
    let mut errors = Vec::new();
    for model in models {
        let gw = cfg.gateway(&model)?;
        let pcfg = ProbeConfig { model: model.clone(), ..cfg.probe.clone() };
        let results: Vec<Result<ProbeLine, String>> = records
            .par_iter()
            .filter_map(|r| r.seed_triplets.first().map(|t| (r, t)))
            .map(|(r, t)| {
                probe_parametric(t, true, &registry, graph.aliases(), &gw, &pcfg)
                    .map(|outcome| ProbeLine { instance_id: r.id.clone(), model: model.clone(), triplet: t.clone(), outcome })
                    .map_err(|e| format!("{}: {e}", r.id))
            })
            .collect();
        let (ok, failed) = split(results);
        lines.extend(ok);
        errors.extend(failed);
    }
    write_jsonl(&cfg.out("probe.jsonl"), &lines)?;
    let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
    for l in &lines {
        *classes.entry(l.outcome.class.as_str()).or_default() += 1;
    }
    let summary = json!({"stage": "probe", "probed": lines.len(), "classes": classes, "errors": errors.len()});
    if !errors.is_empty() {
        return Err(StageErrors { summary, errors }.into());
    }
    Ok(summary)
}

// --------------------------------------------------------------- quality

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityLine {
    pub instance_id: String,
    pub side: char,
    pub dimension: QualityDimension,
    pub rating: Option<u8>,
    pub error: Option<String>,
}

pub fn quality(cfg: &RunConfig, model: &str, records_path: Option<&Path>) -> Result<Value> {
    let path = records_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out("records.jsonl"));
    let records = read_records_path(&path)?;
    let templates = cfg.templates()?;
    let gw = cfg.gateway(model)?;
    let jobs: Vec<(&BenchmarkRecord, char, QualityDimension)> = records
        .iter()
        .flat_map(|r| {
            [('A', QualityDimension::Naturalness), ('A', QualityDimension::Realism), ('B', QualityDimension::Naturalness), ('B', QualityDimension::Realism)]
                .map(|(s, d)| (r, s, d))
        })
        .collect();
    let lines: Vec<QualityLine> = jobs
        .par_iter()
        .map(|&(r, side, dimension)| {
            let text = if side == 'A' { &r.context_a } else { &r.context_b };
            let res = rate_quality(text, dimension, &templates, &gw, model);
            QualityLine {
                instance_id: r.id.clone(),
                side,
                dimension,
                rating: res.as_ref().ok().copied(),
                error: res.err().map(|e| e.to_string()),
            }
        })
        .collect();
    write_jsonl(&cfg.out("quality.jsonl"), &lines)?;
    let mean = |d: QualityDimension| {
        let ratings: Vec<Result<u8, crate::eval::EvalError>> = lines
            .iter()
            .filter(|l| l.dimension == d)
            .map(|l| l.rating.ok_or(crate::eval::EvalError::Rating { raw: String::new() }))
            .collect();
        mean_rating(&ratings)
    };
    Ok(json!({
        "stage": "quality",
        "rated": lines.iter().filter(|l| l.rating.is_some()).count(),
        "failed": lines.iter().filter(|l| l.rating.is_none()).count(),
        "naturalness": mean(QualityDimension::Naturalness),
        "realism": mean(QualityDimension::Realism),
    }))
}

// ----------------------------------------------------------------- adapt

pub fn adapt(cfg: &RunConfig, source: ExternalSource, input: &Path, mapping: Option<&Path>) -> Result<Value> {
    let mapping: AdapterMapping = match mapping {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => source.default_mapping(),
    };
    let format = InputFormat::from_path(input).ok_or_else(|| anyhow!("cannot tell the format of {}", input.display()))?;
    let text = String::from_utf8(read_input(input)?).with_context(|| format!("{} is not UTF-8", input.display()))?;
    let report = adapt_external(source, &text, format, &mapping).map_err(|e| anyhow!("{}: {e}", input.display()))?;
    let out = cfg.out(&format!("adapted_{}.jsonl", source.as_str()));
    write_records_path(&report.records, &out, &cfg.registry()?)?;
    write_jsonl(&cfg.out(&format!("adapt_{}_errors.jsonl", source.as_str())), &report.errors)?;
    Ok(json!({
        "stage": "adapt",
        "source": source.as_str(),
        "records": report.records.len(),
        "loc_eligible": report.loc_eligible,
        "duplicates": report.duplicates,
        "row_errors": report.errors.len(),
        "output": out,
    }))
}

/// Extract through verify in one call.
pub fn synthesize(cfg: &RunConfig) -> Result<Vec<Value>> {
    Ok(vec![ingest(cfg)?, extract(cfg)?, generate(cfg)?, verbalize(cfg)?, verify(cfg)?])
}
