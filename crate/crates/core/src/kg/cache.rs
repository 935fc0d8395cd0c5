//! Binary graph cache keyed by a content hash of the inputs and the filter
//! configuration, so repeated runs skip TSV parsing and filtering.
//!
//! Layout (little endian): magic, format version, key length + key bytes,
//! then entity table, relation table, edges as `u32` triples, and the two
//! alias tables. Strings are `u32` length-prefixed UTF-8.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{AliasEntry, AliasTable, Aliases, Edge, EntityId, FilterConfig, KgError, KnowledgeGraph, RelationId};

const MAGIC: &[u8; 8] = b"KCGRAPH\0";
pub const FORMAT_VERSION: u32 = 1;

/// Content key over the raw input bytes and the serialized filter config.
pub fn cache_key(inputs: &[&[u8]], filter: &FilterConfig) -> String {
    let mut h = Sha256::new();
    h.update(FORMAT_VERSION.to_le_bytes());
    for input in inputs {
        h.update((input.len() as u64).to_le_bytes());
        h.update(input);
    }
    let config = serde_json::to_vec(filter).unwrap_or_default();
    h.update((config.len() as u64).to_le_bytes());
    h.update(&config);
    hex::encode(h.finalize())
}

fn cache_err(msg: impl Into<String>) -> KgError {
    KgError::Cache(msg.into())
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_aliases(out: &mut Vec<u8>, table: &AliasTable) {
    put_u32(out, table.len() as u32);
    for e in table.iter() {
        put_str(out, &e.id);
        put_u32(out, e.aliases.len() as u32);
        for a in &e.aliases {
            put_str(out, a);
        }
    }
}

pub fn encode(graph: &KnowledgeGraph, key: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_str(&mut out, key);
    put_u32(&mut out, graph.entity_table().len() as u32);
    for e in graph.entity_table() {
        put_str(&mut out, e.as_str());
    }
    put_u32(&mut out, graph.relation_table().len() as u32);
    for r in graph.relation_table() {
        put_str(&mut out, r.as_str());
    }
    put_u32(&mut out, graph.raw_edges().len() as u32);
    for e in graph.raw_edges() {
        put_u32(&mut out, e.subject);
        put_u32(&mut out, e.relation);
        put_u32(&mut out, e.object);
    }
    put_aliases(&mut out, &graph.aliases().entities);
    put_aliases(&mut out, &graph.aliases().relations);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], KgError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| cache_err("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, KgError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, KgError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| cache_err("invalid utf-8 string"))
    }

    fn aliases(&mut self) -> Result<AliasTable, KgError> {
        let mut table = AliasTable::default();
        for _ in 0..self.u32()? {
            let id = self.string()?;
            let n = self.u32()?;
            let aliases = (0..n).map(|_| self.string()).collect::<Result<Vec<_>, _>>()?;
            table.insert(AliasEntry::new(id, aliases));
        }
        Ok(table)
    }
}

/// Decode a cache image. Fails on a wrong magic, version, or key, or on any
/// structural inconsistency.
pub fn decode(bytes: &[u8], expected_key: &str) -> Result<KnowledgeGraph, KgError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(cache_err("not a graph cache"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(cache_err(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    if c.string()? != expected_key {
        return Err(cache_err("stale cache key"));
    }
    let entities = (0..c.u32()?).map(|_| c.string().map(EntityId)).collect::<Result<Vec<_>, _>>()?;
    let relations = (0..c.u32()?).map(|_| c.string().map(RelationId)).collect::<Result<Vec<_>, _>>()?;
    let n_edges = c.u32()?;
    let mut edges = Vec::with_capacity(n_edges as usize);
    for _ in 0..n_edges {
        let e = Edge { subject: c.u32()?, relation: c.u32()?, object: c.u32()? };
        if e.subject as usize >= entities.len() || e.object as usize >= entities.len() || e.relation as usize >= relations.len() {
            return Err(cache_err("edge index out of range"));
        }
        edges.push(e);
    }
    if !edges.windows(2).all(|w| w[0] < w[1]) || !entities.windows(2).all(|w| w[0] < w[1]) || !relations.windows(2).all(|w| w[0] < w[1]) {
        return Err(cache_err("tables not sorted"));
    }
    let aliases = Aliases { entities: c.aliases()?, relations: c.aliases()? };
    if c.pos != bytes.len() {
        return Err(cache_err("trailing bytes"));
    }
    Ok(KnowledgeGraph::from_parts(entities, relations, edges, aliases))
}

/// Load a cached graph if the file exists and matches `key`.
pub fn load(path: &Path, key: &str) -> Result<Option<KnowledgeGraph>, KgError> {
    let mut bytes = Vec::new();
    match std::fs::File::open(path) {
        Ok(mut f) => f.read_to_end(&mut bytes).map_err(|error| KgError::Io { source_name: "graph cache", error })?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(error) => return Err(KgError::Io { source_name: "graph cache", error }),
    };
    match decode(&bytes, key) {
        Ok(g) => Ok(Some(g)),
        Err(KgError::Cache(msg)) => {
            log::info!("ignoring graph cache {}: {msg}", path.display());
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Write the cache atomically.
pub fn store(path: &Path, graph: &KnowledgeGraph, key: &str) -> Result<(), KgError> {
    let io = |error| KgError::Io { source_name: "graph cache", error };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&encode(graph, key)).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
