//! Curation store for the two human review passes: picking few-shot
//! demonstrations and filtering generated instances.
//!
//! Items live in `items.jsonl`; decisions go to an append-only
//! `decisions.jsonl` and an item's status is the fold of its log entries.
//! Each entry is fsynced before the call returns. Writes are serialized
//! under one lock; pending items are leased so two reviewers never receive
//! the same one.

mod http;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::conflict::{DemoStatus, Demonstration};
use crate::dataset::BenchmarkRecord;

pub use http::{router, serve};

const DEFAULT_CRITERIA: &str = include_str!("../../assets/review_criteria.toml");

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("no item {0}")]
    NotFound(String),
    #[error("item {0} already has a decision")]
    AlreadyDecided(String),
    #[error("item {id} is leased to {holder}")]
    LeasedByOther { id: String, holder: String },
    #[error("item {0} is pending")]
    NotDecided(String),
    #[error("invalid checklist: {0}")]
    Checklist(String),
    #[error("invalid item: {0}")]
    InvalidItem(String),
    #[error("criteria: {0}")]
    Criteria(String),
    #[error("{path}: line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Demonstration,
    Instance,
}

impl ItemKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ItemKind::Demonstration => "demonstration",
            ItemKind::Instance => "instance",
        }
    }
}

impl std::str::FromStr for ItemKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "demonstration" => Ok(ItemKind::Demonstration),
            "instance" => Ok(ItemKind::Instance),
            other => Err(format!("unknown item kind {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Yes,
    No,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub key: String,
    pub text: String,
    #[serde(default)]
    pub required: bool,
}

/// Checklist per item kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub demonstration: Vec<Criterion>,
    pub instance: Vec<Criterion>,
}

impl Default for Criteria {
    fn default() -> Self {
        Criteria::parse(DEFAULT_CRITERIA).expect("shipped criteria parse")
    }
}

impl Criteria {
    pub fn parse(text: &str) -> Result<Self, ReviewError> {
        let c: Criteria = toml::from_str(text).map_err(|e| ReviewError::Criteria(e.to_string()))?;
        for kind in [ItemKind::Demonstration, ItemKind::Instance] {
            let list = c.for_kind(kind);
            if list.is_empty() {
                return Err(ReviewError::Criteria(format!("no criteria for {}", kind.as_str())));
            }
            let mut keys: Vec<&str> = list.iter().map(|c| c.key.as_str()).collect();
            keys.sort_unstable();
            if keys.windows(2).any(|w| w[0] == w[1]) {
                return Err(ReviewError::Criteria(format!("duplicate key for {}", kind.as_str())));
            }
        }
        Ok(c)
    }

    pub fn for_kind(&self, kind: ItemKind) -> &[Criterion] {
        match kind {
            ItemKind::Demonstration => &self.demonstration,
            ItemKind::Instance => &self.instance,
        }
    }

    /// Every criterion answered, no unknown keys, and no required criterion
    /// answered "no" on an acceptance.
    pub fn check(&self, kind: ItemKind, verdict: Verdict, checklist: &BTreeMap<String, Answer>) -> Result<(), ReviewError> {
        let list = self.for_kind(kind);
        if let Some(k) = checklist.keys().find(|k| !list.iter().any(|c| &c.key == *k)) {
            return Err(ReviewError::Checklist(format!("{k:?} is not a {} criterion", kind.as_str())));
        }
        let missing: Vec<&str> = list.iter().filter(|c| !checklist.contains_key(&c.key)).map(|c| c.key.as_str()).collect();
        if !missing.is_empty() {
            return Err(ReviewError::Checklist(format!("unanswered: {}", missing.join(", "))));
        }
        if verdict == Verdict::Accept {
            if let Some(c) = list.iter().find(|c| c.required && checklist[&c.key] == Answer::No) {
                return Err(ReviewError::Checklist(format!("cannot accept with required criterion {:?} answered no", c.key)));
            }
        }
        Ok(())
    }
}

/// What a reviewer submits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionInput {
    pub verdict: Verdict,
    pub checklist: BTreeMap<String, Answer>,
    #[serde(default)]
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub reviewer: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub verdict: Verdict,
    pub checklist: BTreeMap<String, Answer>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub kind: ItemKind,
    /// A demonstration, or a record draft (which carries its subgraph).
    pub payload: Value,
    pub status: ItemStatus,
    pub decision: Option<Decision>,
}

impl ReviewItem {
    pub fn instance(record: &BenchmarkRecord) -> Self {
        ReviewItem {
            id: record.id.clone(),
            kind: ItemKind::Instance,
            payload: serde_json::to_value(record).expect("records serialize"),
            status: ItemStatus::Pending,
            decision: None,
        }
    }

    pub fn demonstration(demo: &Demonstration) -> Self {
        ReviewItem {
            id: format!("demo-{}", demo.id),
            kind: ItemKind::Demonstration,
            payload: serde_json::to_value(demo).expect("demonstrations serialize"),
            status: ItemStatus::Pending,
            decision: None,
        }
    }
}

/// One line of the decision log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEntry {
    Decided { seq: u64, item: String, decision: Decision },
    /// Supersedes the last decision and puts the item back in the queue.
    Reopened { seq: u64, item: String, by: String, timestamp: u64 },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub leased: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewStats {
    pub by_kind: BTreeMap<String, KindStats>,
    pub decisions_by_reviewer: BTreeMap<String, usize>,
    pub log_entries: u64,
}

struct Lease {
    reviewer: String,
    expires: Instant,
}

#[derive(Default)]
struct State {
    items: Vec<ReviewItem>,
    index: HashMap<String, usize>,
    leases: HashMap<String, Lease>,
    seq: u64,
}

impl State {
    fn lease_holder(&self, id: &str, now: Instant) -> Option<&str> {
        self.leases.get(id).filter(|l| l.expires > now).map(|l| l.reviewer.as_str())
    }
}

pub struct ReviewStore {
    dir: PathBuf,
    criteria: Criteria,
    lease_ttl: Duration,
    state: RwLock<State>,
    /// Held while appending, so log order equals sequence order.
    writer: Mutex<()>,
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReviewError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReviewError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_line<T: Serialize>(path: &Path, values: &[T]) -> Result<(), ReviewError> {
    let mut buf = Vec::new();
    for v in values {
        serde_json::to_writer(&mut buf, v).map_err(std::io::Error::from)?;
        buf.push(b'\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.sync_data()?;
    Ok(())
}

impl ReviewStore {
    pub const LEASE_TTL: Duration = Duration::from_secs(30 * 60);

    /// Open or create a store, replaying the decision log.
    pub fn open(dir: impl Into<PathBuf>, criteria: Criteria) -> Result<Self, ReviewError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut state = State::default();
        for mut item in read_lines::<ReviewItem>(&dir.join("items.jsonl"))? {
            item.status = ItemStatus::Pending;
            item.decision = None;
            if state.index.contains_key(&item.id) {
                continue;
            }
            state.index.insert(item.id.clone(), state.items.len());
            state.items.push(item);
        }
        for entry in read_lines::<LogEntry>(&dir.join("decisions.jsonl"))? {
            let (seq, id) = match &entry {
                LogEntry::Decided { seq, item, .. } | LogEntry::Reopened { seq, item, .. } => (*seq, item.clone()),
            };
            state.seq = state.seq.max(seq);
            let Some(&i) = state.index.get(&id) else { continue };
            let item = &mut state.items[i];
            match entry {
                LogEntry::Decided { decision, .. } => {
                    item.status = match decision.verdict {
                        Verdict::Accept => ItemStatus::Accepted,
                        Verdict::Reject => ItemStatus::Rejected,
                    };
                    item.decision = Some(decision);
                }
                LogEntry::Reopened { .. } => {
                    item.status = ItemStatus::Pending;
                    item.decision = None;
                }
            }
        }
        Ok(ReviewStore { dir, criteria, lease_ttl: Self::LEASE_TTL, state: RwLock::new(state), writer: Mutex::new(()) })
    }

    pub fn with_lease_ttl(mut self, ttl: Duration) -> Self {
        self.lease_ttl = ttl;
        self
    }

    pub fn criteria(&self) -> &Criteria {
        &self.criteria
    }

    /// Add items not already present; returns how many were new.
    pub fn enqueue(&self, items: Vec<ReviewItem>) -> Result<usize, ReviewError> {
        let _w = self.writer.lock().expect("writer lock");
        let fresh: Vec<ReviewItem> = {
            let st = self.state.read().expect("state lock");
            let mut seen = std::collections::HashSet::new();
            let mut fresh = Vec::new();
            for mut item in items {
                if item.id.is_empty() {
                    return Err(ReviewError::InvalidItem("empty id".into()));
                }
                if st.index.contains_key(&item.id) || !seen.insert(item.id.clone()) {
                    continue;
                }
                item.status = ItemStatus::Pending;
                item.decision = None;
                fresh.push(item);
            }
            fresh
        };
        append_line(&self.dir.join("items.jsonl"), &fresh)?;
        let mut st = self.state.write().expect("state lock");
        let n = fresh.len();
        for item in fresh {
            let at = st.items.len();
            st.index.insert(item.id.clone(), at);
            st.items.push(item);
        }
        Ok(n)
    }

    /// The reviewer's current lease of this kind, otherwise the first pending
    /// item nobody holds, now leased to them.
    pub fn next_pending(&self, kind: ItemKind, reviewer: &str) -> Option<ReviewItem> {
        let now = Instant::now();
        let mut st = self.state.write().expect("state lock");
        let held = st.items.iter().position(|it| {
            it.kind == kind && it.status == ItemStatus::Pending && st.lease_holder(&it.id, now) == Some(reviewer)
        });
        let pick = held.or_else(|| {
            st.items
                .iter()
                .position(|it| it.kind == kind && it.status == ItemStatus::Pending && st.lease_holder(&it.id, now).is_none())
        })?;
        let id = st.items[pick].id.clone();
        st.leases.insert(id, Lease { reviewer: reviewer.to_string(), expires: now + self.lease_ttl });
        Some(st.items[pick].clone())
    }

    pub fn get(&self, id: &str) -> Option<ReviewItem> {
        let st = self.state.read().expect("state lock");
        st.index.get(id).map(|&i| st.items[i].clone())
    }

    /// Record a decision. It is on disk before this returns.
    pub fn submit_decision(&self, id: &str, reviewer: &str, input: DecisionInput) -> Result<ReviewItem, ReviewError> {
        let _w = self.writer.lock().expect("writer lock");
        let (kind, seq) = {
            let st = self.state.read().expect("state lock");
            let &i = st.index.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))?;
            let item = &st.items[i];
            if item.status != ItemStatus::Pending {
                return Err(ReviewError::AlreadyDecided(id.to_string()));
            }
            if let Some(holder) = st.lease_holder(id, Instant::now()) {
                if holder != reviewer {
                    return Err(ReviewError::LeasedByOther { id: id.to_string(), holder: holder.to_string() });
                }
            }
            (item.kind, st.seq + 1)
        };
        if reviewer.trim().is_empty() {
            return Err(ReviewError::Checklist("reviewer id is required".into()));
        }
        self.criteria.check(kind, input.verdict, &input.checklist)?;
        let decision = Decision {
            reviewer: reviewer.to_string(),
            timestamp: now_secs(),
            verdict: input.verdict,
            checklist: input.checklist,
            note: input.note,
        };
        append_line(&self.dir.join("decisions.jsonl"), &[LogEntry::Decided { seq, item: id.to_string(), decision: decision.clone() }])?;
        let mut st = self.state.write().expect("state lock");
        st.seq = seq;
        st.leases.remove(id);
        let i = st.index[id];
        let item = &mut st.items[i];
        item.status = match decision.verdict {
            Verdict::Accept => ItemStatus::Accepted,
            Verdict::Reject => ItemStatus::Rejected,
        };
        item.decision = Some(decision);
        Ok(item.clone())
    }

    /// Put a decided item back in the queue; the earlier decision stays in
    /// the log.
    pub fn reopen(&self, id: &str, by: &str) -> Result<ReviewItem, ReviewError> {
        let _w = self.writer.lock().expect("writer lock");
        let seq = {
            let st = self.state.read().expect("state lock");
            let &i = st.index.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))?;
            if st.items[i].status == ItemStatus::Pending {
                return Err(ReviewError::NotDecided(id.to_string()));
            }
            st.seq + 1
        };
        let entry = LogEntry::Reopened { seq, item: id.to_string(), by: by.to_string(), timestamp: now_secs() };
        append_line(&self.dir.join("decisions.jsonl"), &[entry])?;
        let mut st = self.state.write().expect("state lock");
        st.seq = seq;
        let i = st.index[id];
        let item = &mut st.items[i];
        item.status = ItemStatus::Pending;
        item.decision = None;
        Ok(item.clone())
    }

    /// Accepted items of a kind, one JSON object per line: benchmark records
    /// for instances, few-shot bank entries for demonstrations.
    pub fn export_accepted<W: Write>(&self, kind: ItemKind, mut sink: W) -> Result<usize, ReviewError> {
        let st = self.state.read().expect("state lock");
        let mut n = 0;
        for item in st.items.iter().filter(|it| it.kind == kind && it.status == ItemStatus::Accepted) {
            let d = item.decision.as_ref().expect("accepted items carry a decision");
            let value = match kind {
                ItemKind::Instance => {
                    let mut rec: BenchmarkRecord = serde_json::from_value(item.payload.clone())
                        .map_err(|e| ReviewError::InvalidItem(format!("{}: {e}", item.id)))?;
                    rec.provenance.review_decisions.push(format!("accepted by {} at {}", d.reviewer, d.timestamp));
                    serde_json::to_value(rec).map_err(std::io::Error::from)?
                }
                ItemKind::Demonstration => {
                    let mut demo: Demonstration = serde_json::from_value(item.payload.clone())
                        .map_err(|e| ReviewError::InvalidItem(format!("{}: {e}", item.id)))?;
                    demo.status = DemoStatus::Accepted;
                    serde_json::to_value(demo).map_err(std::io::Error::from)?
                }
            };
            serde_json::to_writer(&mut sink, &value).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            n += 1;
        }
        sink.flush()?;
        Ok(n)
    }

    pub fn stats(&self) -> ReviewStats {
        let now = Instant::now();
        let st = self.state.read().expect("state lock");
        let mut out = ReviewStats { log_entries: st.seq, ..Default::default() };
        for kind in [ItemKind::Demonstration, ItemKind::Instance] {
            out.by_kind.insert(kind.as_str().into(), KindStats::default());
        }
        for it in &st.items {
            let k = out.by_kind.get_mut(it.kind.as_str()).expect("both kinds present");
            match it.status {
                ItemStatus::Pending => {
                    k.pending += 1;
                    if st.lease_holder(&it.id, now).is_some() {
                        k.leased += 1;
                    }
                }
                ItemStatus::Accepted => k.accepted += 1,
                ItemStatus::Rejected => k.rejected += 1,
            }
            if let Some(d) = &it.decision {
                *out.decisions_by_reviewer.entry(d.reviewer.clone()).or_default() += 1;
            }
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataset::stub_dataset;
    use crate::fact::SurfaceTriple;
    use std::sync::Arc;

    pub(crate) fn full_checklist(kind: ItemKind, answer: Answer) -> BTreeMap<String, Answer> {
        Criteria::default().for_kind(kind).iter().map(|c| (c.key.clone(), answer)).collect()
    }

    pub(crate) fn accept(kind: ItemKind) -> DecisionInput {
        DecisionInput { verdict: Verdict::Accept, checklist: full_checklist(kind, Answer::Yes), note: String::new() }
    }

    pub(crate) fn reject(kind: ItemKind) -> DecisionInput {
        DecisionInput { verdict: Verdict::Reject, checklist: full_checklist(kind, Answer::No), note: "off topic".into() }
    }

    pub(crate) fn ten_instances() -> Vec<ReviewItem> {
        stub_dataset(&[4, 3, 2, 1, 0, 0, 0, 0]).iter().map(ReviewItem::instance).collect()
    }

    #[test]
    fn accept_seven_reject_three() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path(), Criteria::default()).unwrap();
        assert_eq!(store.enqueue(ten_instances()).unwrap(), 10);
        assert_eq!(store.enqueue(ten_instances()).unwrap(), 0);
        for i in 0..10 {
            let item = store.next_pending(ItemKind::Instance, "r1").unwrap();
            let input = if i < 7 { accept(ItemKind::Instance) } else { reject(ItemKind::Instance) };
            store.submit_decision(&item.id, "r1", input).unwrap();
        }
        assert!(store.next_pending(ItemKind::Instance, "r1").is_none());
        let mut out = Vec::new();
        assert_eq!(store.export_accepted(ItemKind::Instance, &mut out).unwrap(), 7);
        let recs = crate::dataset::read_records(out.as_slice()).unwrap();
        assert_eq!(recs.len(), 7);
        assert!(recs[0].provenance.review_decisions[0].starts_with("accepted by r1"));
        let s = store.stats();
        assert_eq!(s.by_kind["instance"], KindStats { pending: 0, accepted: 7, rejected: 3, leased: 0 });
        assert_eq!(s.decisions_by_reviewer["r1"], 10);
    }

    #[test]
    fn transitions_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path(), Criteria::default()).unwrap();
        store.enqueue(ten_instances()).unwrap();
        let item = store.next_pending(ItemKind::Instance, "r1").unwrap();
        assert!(matches!(
            store.submit_decision(&item.id, "r2", accept(ItemKind::Instance)),
            Err(ReviewError::LeasedByOther { .. })
        ));
        let mut partial = accept(ItemKind::Instance);
        partial.checklist.remove("fluent");
        assert!(matches!(store.submit_decision(&item.id, "r1", partial), Err(ReviewError::Checklist(_))));
        let mut stray = accept(ItemKind::Instance);
        stray.checklist.insert("coherent".into(), Answer::Yes);
        assert!(matches!(store.submit_decision(&item.id, "r1", stray), Err(ReviewError::Checklist(_))));
        let mut bad = accept(ItemKind::Instance);
        bad.checklist.insert("independent".into(), Answer::No);
        assert!(matches!(store.submit_decision(&item.id, "r1", bad), Err(ReviewError::Checklist(_))));
        let mut na = accept(ItemKind::Instance);
        na.checklist.insert("multi_hop_chain".into(), Answer::NotApplicable);
        let done = store.submit_decision(&item.id, "r1", na).unwrap();
        assert_eq!(done.status, ItemStatus::Accepted);
        assert!(matches!(
            store.submit_decision(&item.id, "r1", accept(ItemKind::Instance)),
            Err(ReviewError::AlreadyDecided(_))
        ));
        assert!(matches!(store.submit_decision("nope", "r1", accept(ItemKind::Instance)), Err(ReviewError::NotFound(_))));
        assert!(store.get(&item.id).unwrap().decision.is_some());
        assert!(store.get(&ten_instances()[1].id).unwrap().decision.is_none());
    }

    #[test]
    fn log_replay_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = ten_instances().into_iter().map(|i| i.id).collect();
        {
            let store = ReviewStore::open(dir.path(), Criteria::default()).unwrap();
            store.enqueue(ten_instances()).unwrap();
            store.submit_decision(&ids[0], "r1", accept(ItemKind::Instance)).unwrap();
            store.submit_decision(&ids[1], "r1", reject(ItemKind::Instance)).unwrap();
            store.reopen(&ids[1], "admin").unwrap();
            assert!(matches!(store.reopen(&ids[2], "admin"), Err(ReviewError::NotDecided(_))));
        }
        let store = ReviewStore::open(dir.path(), Criteria::default()).unwrap();
        assert_eq!(store.get(&ids[0]).unwrap().status, ItemStatus::Accepted);
        assert_eq!(store.get(&ids[1]).unwrap().status, ItemStatus::Pending);
        assert_eq!(store.stats().log_entries, 3);
        store.submit_decision(&ids[1], "r2", accept(ItemKind::Instance)).unwrap();
        let log = fs::read_to_string(dir.path().join("decisions.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 4);
        assert!(log.lines().last().unwrap().contains("\"seq\":4"));
    }

    #[test]
    fn reviewers_never_share_an_item() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReviewStore::open(dir.path(), Criteria::default()).unwrap());
        let items: Vec<ReviewItem> = stub_dataset(&[20, 20, 20, 20, 20, 0, 0, 0]).iter().map(ReviewItem::instance).collect();
        store.enqueue(items).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|r| {
                let store = Arc::clone(&store);
                std::thread::spawn(move || {
                    let reviewer = format!("r{r}");
                    let mut served = Vec::new();
                    while let Some(item) = store.next_pending(ItemKind::Instance, &reviewer) {
                        served.push(item.id.clone());
                        store.submit_decision(&item.id, &reviewer, accept(ItemKind::Instance)).unwrap();
                    }
                    served
                })
            })
            .collect();
        let mut all: Vec<String> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        assert_eq!(all.len(), 100);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 100);
        assert_eq!(store.stats().by_kind["instance"].accepted, 100);
    }

    #[test]
    fn concurrent_submissions_decide_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(ReviewStore::open(dir.path(), Criteria::default()).unwrap());
        store.enqueue(ten_instances()).unwrap();
        let ids: Vec<String> = ten_instances().into_iter().map(|i| i.id).collect();
        let handles: Vec<_> = (0..8)
            .map(|r| {
                let (store, ids) = (Arc::clone(&store), ids.clone());
                std::thread::spawn(move || {
                    ids.iter().filter(|id| store.submit_decision(id, &format!("r{r}"), accept(ItemKind::Instance)).is_ok()).count()
                })
            })
            .collect();
        let wins: usize = handles.into_iter().map(|h| h.join().unwrap()).sum();
        assert_eq!(wins, 10);
        let log = fs::read_to_string(dir.path().join("decisions.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 10);
        let reopened = ReviewStore::open(dir.path(), Criteria::default()).unwrap();
        assert_eq!(reopened.stats().by_kind["instance"].accepted, 10);
    }

    #[test]
    fn expired_leases_return_to_the_pool() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path(), Criteria::default()).unwrap().with_lease_ttl(Duration::ZERO);
        store.enqueue(ten_instances()).unwrap();
        let a = store.next_pending(ItemKind::Instance, "r1").unwrap();
        let b = store.next_pending(ItemKind::Instance, "r2").unwrap();
        assert_eq!(a.id, b.id);
    }

    #[test]
    fn demonstrations_export_to_the_bank() {
        let dir = tempfile::tempdir().unwrap();
        let store = ReviewStore::open(dir.path(), Criteria::default()).unwrap();
        let demo = Demonstration {
            id: "7".into(),
            relation: "P150".into(),
            original: SurfaceTriple::new("Tocantins", "contains", "Palmas"),
            replacement: vec![SurfaceTriple::new("Palmas", "is located in", "Goiás")],
            status: DemoStatus::Pending,
        };
        store.enqueue(vec![ReviewItem::demonstration(&demo)]).unwrap();
        assert!(store.next_pending(ItemKind::Instance, "r1").is_none());
        let item = store.next_pending(ItemKind::Demonstration, "r1").unwrap();
        assert_eq!(item.id, "demo-7");
        assert!(store.submit_decision(&item.id, "r1", accept(ItemKind::Instance)).is_err());
        store.submit_decision(&item.id, "r1", accept(ItemKind::Demonstration)).unwrap();
        let mut out = Vec::new();
        store.export_accepted(ItemKind::Demonstration, &mut out).unwrap();
        let bank = crate::conflict::FewShotBank::read_jsonl(out.as_slice()).unwrap();
        assert_eq!(bank.demos[0].status, DemoStatus::Accepted);
        assert_eq!(bank.for_prompt(&"P150".into()).len(), 1);
    }

    #[test]
    fn criteria_file_is_validated() {
        assert!(Criteria::parse("demonstration = []\ninstance = []").is_err());
        let dup = "[[demonstration]]\nkey='a'\ntext='x'\n[[demonstration]]\nkey='a'\ntext='y'\n[[instance]]\nkey='b'\ntext='z'\n";
        assert!(Criteria::parse(dup).is_err());
        assert_eq!(Criteria::default().instance.len(), 4);
    }
}
