//! C ABI over the kconflict core: graph loading, subgraph extraction,
//! detection-response parsing and instance scoring.
//!
//! Every function returns a [`KcStatus`]. On failure a description is kept
//! per thread and can be read with [`kc_last_error_message`]. Structured
//! results come back as JSON strings owned by the caller and released with
//! [`kc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kconflict::eval::{parse_detection_response, score_instance, Aggregation, Strategy};
use kconflict::extract::{extract, task_rng, ExtractionConfig, SeedSampler};
use kconflict::kg::{apply_filters, load_graph, FilterConfig};
use kconflict::verbalize::GoldPair;
use kconflict::{EntityId, KnowledgeGraph, RelationRegistry};

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    /// Malformed JSON or an input the core rejected.
    InvalidInput = 4,
    NotFound = 5,
    /// A panic was caught at the boundary.
    Internal = 6,
}

/// Opaque handle to a loaded, filtered graph.
pub struct KcGraph {
    graph: KnowledgeGraph,
    registry: RelationRegistry,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (KcStatus, String);

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KcStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal error: {msg}"));
            KcStatus::Internal
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    (KcStatus::InvalidInput, e.to_string())
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((KcStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (KcStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// As [`str_arg`]; null gives `None`.
unsafe fn opt_str_arg<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, name).map(Some)
    }
}

/// # Safety
/// `out` is null or writable.
unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err((KcStatus::NullArgument, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

/// # Safety
/// `out` is null or writable.
unsafe fn write_json(out: *mut *mut c_char, text: serde_json::Result<String>) -> Result<(), Failure> {
    let text = text.map_err(|e| (KcStatus::Internal, e.to_string()))?;
    let c = CString::new(text).map_err(|e| (KcStatus::Internal, e.to_string()))?;
    write_out(out, c.into_raw())
}

/// # Safety
/// `g` is null or a live handle from [`kc_graph_load`].
unsafe fn graph_arg<'a>(g: *const KcGraph) -> Result<&'a KcGraph, Failure> {
    g.as_ref().ok_or_else(|| (KcStatus::NullArgument, "graph handle is null".into()))
}

fn open(path: &str) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| (KcStatus::Io, format!("{path}: {e}")))
}

/// Load a graph from triplet, entity and relation TSV files and apply the
/// filter given as JSON (null for the default filter). The handle is
/// written to `out` and must be released with [`kc_graph_free`].
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kc_graph_load(
    triplets_path: *const c_char,
    entities_path: *const c_char,
    relations_path: *const c_char,
    filter_json: *const c_char,
    out: *mut *mut KcGraph,
) -> KcStatus {
    guard(|| {
        let t = open(str_arg(triplets_path, "triplets_path")?)?;
        let e = open(str_arg(entities_path, "entities_path")?)?;
        let r = open(str_arg(relations_path, "relations_path")?)?;
        let filter: FilterConfig = match opt_str_arg(filter_json, "filter_json")? {
            Some(j) => serde_json::from_str(j).map_err(invalid)?,
            None => FilterConfig::default(),
        };
        let (raw, _) = load_graph(t, e, r).map_err(|e| (KcStatus::Io, e.to_string()))?;
        let graph = apply_filters(&raw, &filter).map_err(invalid)?;
        let handle = Box::new(KcGraph { graph, registry: RelationRegistry::default() });
        write_out(out, Box::into_raw(handle))
    })
}

/// Release a graph handle. Null is ignored.
///
/// # Safety
/// `g` is null or a handle from [`kc_graph_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kc_graph_free(g: *mut KcGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// # Safety
/// `g` is a live handle; the output pointers are writable.
#[no_mangle]
pub unsafe extern "C" fn kc_graph_counts(g: *const KcGraph, entities: *mut usize, triplets: *mut usize) -> KcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        write_out(entities, g.graph.entity_count())?;
        write_out(triplets, g.graph.triplet_count())
    })
}

/// Number of triplets touching `entity_id`; `KC_STATUS_NOT_FOUND` when the
/// entity is not in the graph.
///
/// # Safety
/// `g` is a live handle; `entity_id` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kc_graph_degree(g: *const KcGraph, entity_id: *const c_char, out: *mut usize) -> KcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let id = str_arg(entity_id, "entity_id")?;
        let d = g.graph.degree(&EntityId::new(id)).ok_or_else(|| (KcStatus::NotFound, format!("unknown entity {id}")))?;
        write_out(out, d)
    })
}

/// Sample a seed and extract one subgraph, as the core does for task
/// `index` of a run seeded with `seed`. `config_json` holds extraction
/// settings (null for defaults). The subgraph is written to `out` as JSON.
///
/// # Safety
/// `g` is a live handle; `config_json` is null or NUL-terminated; `out` is
/// writable.
#[no_mangle]
pub unsafe extern "C" fn kc_extract_subgraph_json(
    g: *const KcGraph,
    seed: u64,
    index: u64,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> KcStatus {
    guard(|| {
        let g = graph_arg(g)?;
        let config: ExtractionConfig = match opt_str_arg(config_json, "config_json")? {
            Some(j) => serde_json::from_str(j).map_err(invalid)?,
            None => ExtractionConfig::default(),
        };
        let sampler = SeedSampler::new(&g.graph, &g.registry).map_err(invalid)?;
        let mut rng = task_rng(seed, index);
        let seed_triplet = sampler.sample(&mut rng);
        let sg = extract(&g.graph, &g.registry, &seed_triplet, &config, &mut rng).map_err(invalid)?;
        write_json(out, serde_json::to_string(&sg))
    })
}

/// Parse a model's reply to a detection prompt. `strategy` is 0 for the
/// binary prompt and 1 for the multi-step prompt.
///
/// # Safety
/// `raw` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kc_parse_detection_response_json(raw: *const c_char, strategy: u32, out: *mut *mut c_char) -> KcStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let strategy = match strategy {
            0 => Strategy::Binary,
            1 => Strategy::MultiStep,
            other => return Err(invalid(format!("unknown strategy {other}"))),
        };
        write_json(out, serde_json::to_string(&parse_detection_response(raw, strategy)))
    })
}

/// Score one instance from three parsed runs (a JSON array as produced by
/// [`kc_parse_detection_response_json`]) and optional gold sentence pairs.
/// `aggregation` is `all_runs`, `majority` or `any_run`; null means
/// `all_runs`.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn kc_score_instance_json(
    runs_json: *const c_char,
    gold_json: *const c_char,
    threshold: f64,
    aggregation: *const c_char,
    out: *mut *mut c_char,
) -> KcStatus {
    guard(|| {
        let runs: Vec<_> = serde_json::from_str(str_arg(runs_json, "runs_json")?).map_err(invalid)?;
        let gold: Option<Vec<GoldPair>> = match opt_str_arg(gold_json, "gold_json")? {
            Some(j) => Some(serde_json::from_str(j).map_err(invalid)?),
            None => None,
        };
        let agg: Aggregation = match opt_str_arg(aggregation, "aggregation")? {
            Some(a) => a.parse().map_err(invalid)?,
            None => Aggregation::AllRuns,
        };
        let score = score_instance(&runs, gold.as_deref(), threshold, agg).map_err(invalid)?;
        write_json(out, serde_json::to_string(&score))
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn kc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Description of the last failure on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn kc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn kc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
