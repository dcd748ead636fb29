//! Two-tier reflective memory.
//!
//! The dynamic tier holds verified repair cases produced at runtime; the static
//! tier holds seeded secure-coding guidance. Retrieval consults the dynamic
//! tier first and only widens to the union of both tiers when the dynamic
//! results are too few or too dissimilar (see [`ReflectiveMemory::retrieve`]).
//!
//! Seed and snapshot files are JSON Lines, one [`MemoryEntry`] per line.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{rank_order, EmbeddingError, EmbeddingVector, Embedder, VectorIndex};
use crate::sample::serialize_context;

pub const DEFAULT_K: usize = 3;
pub const DEFAULT_K_MIN: usize = 1;
pub const DEFAULT_THETA: f64 = 0.70;

const SNAPSHOT_FORMAT: &str = "refguard-memory-snapshot";
const ENTRY_FIELDS: [&str; 11] = [
    "entry_id",
    "tier",
    "problem_code",
    "context",
    "diagnosis",
    "fix_code",
    "cwe_tag",
    "verified",
    "created_at",
    "source_run",
    "content_hash",
];

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("refusing to deposit unverified dynamic entry `{0}`")]
    Unverified(String),
    #[error("static entry `{0}` must not carry a source_run")]
    StaticWithSourceRun(String),
    #[error("entry `{0}` belongs to the wrong tier for this operation")]
    WrongTier(String),
    #[error("invalid entry id `{0}` (must be non-empty without whitespace)")]
    InvalidId(String),
    #[error("entry id `{0}` already used by different content")]
    DuplicateId(String),
    #[error("content hash mismatch for entry `{0}`")]
    HashMismatch(String),
    #[error("invalid retrieval parameters: {0}")]
    InvalidQuery(String),
    #[error("{path}: record #{record} (line {line}): {message}")]
    Schema {
        path: String,
        record: usize,
        line: usize,
        message: String,
    },
    #[error("snapshot dimension {found} does not match store dimension {expected}")]
    SnapshotDim { expected: usize, found: usize },
    #[error("corrupt snapshot {path}: {message}")]
    CorruptSnapshot { path: String, message: String },
    #[error("restore requires an empty dynamic tier (found {0} entries)")]
    NotEmpty(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Tier {
    Dynamic,
    #[default]
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: String,
    #[serde(default)]
    pub tier: Tier,
    pub problem_code: String,
    #[serde(default)]
    pub context: String,
    pub diagnosis: String,
    #[serde(default)]
    pub fix_code: String,
    #[serde(default)]
    pub cwe_tag: Option<String>,
    #[serde(default)]
    pub verified: bool,
    #[serde(default)]
    pub created_at: u64,
    #[serde(default)]
    pub source_run: Option<String>,
    #[serde(default)]
    pub content_hash: String,
}

impl MemoryEntry {
    /// A verified dynamic case. The id is derived from the content hash.
    pub fn dynamic(
        problem_code: impl Into<String>,
        context: impl Into<String>,
        diagnosis: impl Into<String>,
        fix_code: impl Into<String>,
    ) -> Self {
        let problem_code = problem_code.into();
        let fix_code = fix_code.into();
        let content_hash = content_hash(&problem_code, &fix_code);
        Self {
            entry_id: format!("D-{}", &content_hash[..16]),
            tier: Tier::Dynamic,
            problem_code,
            context: context.into(),
            diagnosis: diagnosis.into(),
            fix_code,
            cwe_tag: None,
            verified: true,
            created_at: 0,
            source_run: None,
            content_hash,
        }
    }

    pub fn static_guideline(
        entry_id: impl Into<String>,
        problem_code: impl Into<String>,
        diagnosis: impl Into<String>,
        fix_code: impl Into<String>,
    ) -> Self {
        let problem_code = problem_code.into();
        let fix_code = fix_code.into();
        Self {
            entry_id: entry_id.into(),
            tier: Tier::Static,
            content_hash: content_hash(&problem_code, &fix_code),
            problem_code,
            context: String::new(),
            diagnosis: diagnosis.into(),
            fix_code,
            cwe_tag: None,
            verified: false,
            created_at: 0,
            source_run: None,
        }
    }

    pub fn with_cwe(mut self, cwe: Option<String>) -> Self {
        self.cwe_tag = cwe;
        self
    }

    pub fn with_source_run(mut self, run: Option<String>) -> Self {
        self.source_run = run;
        self
    }

    pub fn with_created_at(mut self, ts: u64) -> Self {
        self.created_at = ts;
        self
    }

    /// The text that gets embedded; queries use the same shape.
    pub fn retrieval_text(&self) -> String {
        retrieval_text(&self.problem_code, &self.context)
    }
}

pub fn retrieval_text(code: &str, context: &str) -> String {
    format!("{code}\n{context}")
}

/// SHA-256 over the length-prefixed problem and fix, lowercase hex.
pub fn content_hash(problem_code: &str, fix_code: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("{}:", problem_code.len()).as_bytes());
    h.update(problem_code.as_bytes());
    h.update(format!("{}:", fix_code.len()).as_bytes());
    h.update(fix_code.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalParams {
    pub k: usize,
    pub k_min: usize,
    pub theta: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            k_min: DEFAULT_K_MIN,
            theta: DEFAULT_THETA,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), MemoryError> {
        if self.k == 0 || self.k_min == 0 {
            return Err(MemoryError::InvalidQuery("k and k_min must be >= 1".into()));
        }
        if self.k_min > self.k {
            return Err(MemoryError::InvalidQuery(format!(
                "k_min ({}) exceeds k ({})",
                self.k_min, self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(MemoryError::InvalidQuery(format!(
                "theta {} outside [0, 1]",
                self.theta
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalQuery {
    pub code: String,
    pub context: String,
    pub params: RetrievalParams,
}

impl RetrievalQuery {
    pub fn new(code: impl Into<String>, context: impl Into<String>, params: RetrievalParams) -> Self {
        Self {
            code: code.into(),
            context: context.into(),
            params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceItem {
    pub entry: MemoryEntry,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub items: Vec<EvidenceItem>,
    pub fallback_used: bool,
    pub dynamic_hit_count: usize,
    pub max_dynamic_sim: f64,
}

impl EvidenceSet {
    pub fn empty_fallback() -> Self {
        Self {
            items: Vec::new(),
            fallback_used: true,
            dynamic_hit_count: 0,
            max_dynamic_sim: 0.0,
        }
    }

    pub fn similarities(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.similarity).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DepositOutcome {
    Inserted,
    Duplicate,
}

#[derive(Debug, Clone)]
struct TierStore {
    index: VectorIndex,
    entries: HashMap<String, MemoryEntry>,
    order: Vec<String>,
    hashes: HashSet<String>,
}

impl TierStore {
    fn new(dim: usize) -> Result<Self, EmbeddingError> {
        Ok(Self {
            index: VectorIndex::new(dim)?,
            entries: HashMap::new(),
            order: Vec::new(),
            hashes: HashSet::new(),
        })
    }

    fn len(&self) -> usize {
        self.order.len()
    }
}

#[derive(Debug, Clone)]
struct State {
    dynamic: TierStore,
    statics: TierStore,
    next_seq: u64,
}

impl State {
    fn tier(&self, tier: Tier) -> &TierStore {
        match tier {
            Tier::Dynamic => &self.dynamic,
            Tier::Static => &self.statics,
        }
    }

    fn tier_mut(&mut self, tier: Tier) -> &mut TierStore {
        match tier {
            Tier::Dynamic => &mut self.dynamic,
            Tier::Static => &mut self.statics,
        }
    }

    fn lookup(&self, id: &str) -> Option<&MemoryEntry> {
        self.dynamic
            .entries
            .get(id)
            .or_else(|| self.statics.entries.get(id))
    }
}

/// The reflective memory store. Retrievals share a read lock; deposits,
/// seeding and restore take the write lock, so a retrieval never sees a
/// half-inserted entry.
pub struct ReflectiveMemory {
    embedder: Arc<dyn Embedder>,
    state: RwLock<State>,
}

impl std::fmt::Debug for ReflectiveMemory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReflectiveMemory")
            .field("dim", &self.dim())
            .field("dynamic", &self.dynamic_len())
            .field("static", &self.static_len())
            .finish()
    }
}

impl ReflectiveMemory {
    pub fn new(embedder: Arc<dyn Embedder>) -> Result<Self, MemoryError> {
        let dim = embedder.dim();
        Ok(Self {
            embedder,
            state: RwLock::new(State {
                dynamic: TierStore::new(dim)?,
                statics: TierStore::new(dim)?,
                next_seq: 0,
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn dynamic_len(&self) -> usize {
        self.read().dynamic.len()
    }

    pub fn static_len(&self) -> usize {
        self.read().statics.len()
    }

    /// Entries of one tier in insertion order.
    pub fn entries(&self, tier: Tier) -> Vec<MemoryEntry> {
        let state = self.read();
        let store = state.tier(tier);
        store.order.iter().map(|id| store.entries[id].clone()).collect()
    }

    pub fn get(&self, entry_id: &str) -> Option<MemoryEntry> {
        self.read().lookup(entry_id).cloned()
    }

    /// Hierarchical retrieval for a code/context query.
    pub fn retrieve(&self, query: &RetrievalQuery) -> Result<EvidenceSet, MemoryError> {
        let vector = self
            .embedder
            .embed(&retrieval_text(&query.code, &query.context));
        self.retrieve_embedded(&vector, &query.params)
    }

    /// Retrieval with a precomputed query vector.
    ///
    /// The dynamic tier is scanned for its top `k`. If at least `k_min` of
    /// those have positive similarity and the best reaches `theta`, the result
    /// is exactly that list. Otherwise the result is the top `k` over both
    /// tiers ranked by similarity alone, and `fallback_used` is set.
    pub fn retrieve_embedded(
        &self,
        query: &EmbeddingVector,
        params: &RetrievalParams,
    ) -> Result<EvidenceSet, MemoryError> {
        params.validate()?;
        let state = self.read();
        let dyn_hits = state.dynamic.index.top_k(query, params.k)?;
        let dynamic_hit_count = dyn_hits.iter().filter(|h| h.similarity > 0.0).count();
        let max_dynamic_sim = dyn_hits.first().map_or(0.0, |h| h.similarity);
        let confident = dynamic_hit_count >= params.k_min && max_dynamic_sim >= params.theta;

        let hits = if confident {
            dyn_hits
        } else {
            let mut merged = dyn_hits;
            merged.extend(state.statics.index.top_k(query, params.k)?);
            merged.sort_by(rank_order);
            merged.truncate(params.k);
            merged
        };

        let items = hits
            .into_iter()
            .map(|h| EvidenceItem {
                entry: state
                    .lookup(&h.doc_id)
                    .cloned()
                    .expect("indexed doc has an entry"),
                similarity: h.similarity,
            })
            .collect();
        Ok(EvidenceSet {
            items,
            fallback_used: !confident,
            dynamic_hit_count,
            max_dynamic_sim,
        })
    }

    /// Stores an entry, embedding its retrieval text.
    pub fn deposit(&self, entry: MemoryEntry) -> Result<DepositOutcome, MemoryError> {
        let vector = self.embedder.embed(&entry.retrieval_text());
        self.deposit_with_vector(entry, vector)
    }

    /// Stores an entry under an explicit vector (custom embedders, fixtures).
    pub fn deposit_with_vector(
        &self,
        mut entry: MemoryEntry,
        vector: EmbeddingVector,
    ) -> Result<DepositOutcome, MemoryError> {
        validate_entry(&mut entry)?;
        let mut state = self.write();
        if state.tier(entry.tier).hashes.contains(&entry.content_hash) {
            return Ok(DepositOutcome::Duplicate);
        }
        if state.lookup(&entry.entry_id).is_some() {
            return Err(MemoryError::DuplicateId(entry.entry_id));
        }
        let seq = state.next_seq;
        let store = state.tier_mut(entry.tier);
        store
            .index
            .insert_with_seq(entry.entry_id.clone(), vector, seq)?;
        store.hashes.insert(entry.content_hash.clone());
        store.order.push(entry.entry_id.clone());
        store.entries.insert(entry.entry_id.clone(), entry);
        state.next_seq = seq + 1;
        Ok(DepositOutcome::Inserted)
    }

    /// Loads static guidance from a JSON Lines seed file. Records without a
    /// `tier` field are taken as static; any other tier is rejected. Returns
    /// the number of entries inserted (duplicate content is skipped).
    pub fn load_static_seed(&self, path: &Path) -> Result<usize, MemoryError> {
        let text = read_to_string(path)?;
        let records = parse_entries(&text, path)?;
        let mut inserted = 0;
        for (record, line, entry) in records {
            if entry.tier != Tier::Static {
                return Err(schema(path, record, line, "seed records must be STATIC"));
            }
            match self.deposit(entry) {
                Ok(DepositOutcome::Inserted) => inserted += 1,
                Ok(DepositOutcome::Duplicate) => {
                    log::warn!("{}: line {line}: duplicate static entry skipped", path.display())
                }
                Err(e) => return Err(schema(path, record, line, &e.to_string())),
            }
        }
        Ok(inserted)
    }

    /// Writes the dynamic tier (header line, then entries in insertion order).
    pub fn snapshot(&self, path: &Path) -> Result<usize, MemoryError> {
        let entries = self.entries(Tier::Dynamic);
        let mut out = serde_json::to_string(&SnapshotHeader {
            format: SNAPSHOT_FORMAT.to_string(),
            version: 1,
            dim: self.dim(),
            entries: entries.len(),
        })
        .expect("header serializes");
        out.push('\n');
        for e in &entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        let io = |source| MemoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(out.as_bytes()).map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(entries.len())
    }

    /// Loads a snapshot into an empty dynamic tier.
    pub fn restore(&self, path: &Path) -> Result<usize, MemoryError> {
        let existing = self.dynamic_len();
        if existing > 0 {
            return Err(MemoryError::NotEmpty(existing));
        }
        let text = read_to_string(path)?;
        let corrupt = |message: String| MemoryError::CorruptSnapshot {
            path: path.display().to_string(),
            message,
        };
        let (header_line, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
        let header: SnapshotHeader = serde_json::from_str(header_line)
            .map_err(|e| corrupt(format!("bad header: {e}")))?;
        if header.format != SNAPSHOT_FORMAT {
            return Err(corrupt(format!("unexpected format `{}`", header.format)));
        }
        if header.dim != self.dim() {
            return Err(MemoryError::SnapshotDim {
                expected: self.dim(),
                found: header.dim,
            });
        }
        let records = parse_entries(body, path).map_err(|e| corrupt(e.to_string()))?;
        if records.len() != header.entries {
            return Err(corrupt(format!(
                "header announces {} entries, found {}",
                header.entries,
                records.len()
            )));
        }
        // Validate everything before touching the store.
        let mut staged = Vec::with_capacity(records.len());
        for (record, line, mut entry) in records {
            if entry.tier != Tier::Dynamic {
                return Err(corrupt(format!("record #{record} (line {}) is not DYNAMIC", line + 1)));
            }
            validate_entry(&mut entry).map_err(|e| corrupt(e.to_string()))?;
            let vector = self.embedder.embed(&entry.retrieval_text());
            staged.push((entry, vector));
        }
        let n = staged.len();
        for (entry, vector) in staged {
            if self.deposit_with_vector(entry, vector)? == DepositOutcome::Duplicate {
                return Err(corrupt("duplicate content in snapshot".into()));
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    format: String,
    version: u32,
    dim: usize,
    entries: usize,
}

fn validate_entry(entry: &mut MemoryEntry) -> Result<(), MemoryError> {
    if entry.entry_id.is_empty() || entry.entry_id.chars().any(char::is_whitespace) {
        return Err(MemoryError::InvalidId(entry.entry_id.clone()));
    }
    match entry.tier {
        Tier::Dynamic if !entry.verified => {
            return Err(MemoryError::Unverified(entry.entry_id.clone()))
        }
        Tier::Static if entry.source_run.is_some() => {
            return Err(MemoryError::StaticWithSourceRun(entry.entry_id.clone()))
        }
        _ => {}
    }
    let expected = content_hash(&entry.problem_code, &entry.fix_code);
    if entry.content_hash.is_empty() {
        entry.content_hash = expected;
    } else if entry.content_hash != expected {
        return Err(MemoryError::HashMismatch(entry.entry_id.clone()));
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String, MemoryError> {
    fs::read_to_string(path).map_err(|source| MemoryError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn schema(path: &Path, record: usize, line: usize, message: &str) -> MemoryError {
    MemoryError::Schema {
        path: path.display().to_string(),
        record,
        line: line + 1,
        message: message.to_string(),
    }
}

/// Parses JSON Lines into entries, returning `(record index, 0-based line,
/// entry)`. Blank lines are skipped; unknown fields are logged and ignored.
fn parse_entries(text: &str, path: &Path) -> Result<Vec<(usize, usize, MemoryEntry)>, MemoryError> {
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = out.len();
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| schema(path, record, line_no, &format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema(path, record, line_no, "record is not a JSON object"))?;
        for key in obj.keys() {
            if !ENTRY_FIELDS.contains(&key.as_str()) {
                log::warn!(
                    "{}: line {}: ignoring unknown field `{key}`",
                    path.display(),
                    line_no + 1
                );
            }
        }
        let entry: MemoryEntry = serde_json::from_value(value)
            .map_err(|e| schema(path, record, line_no, &e.to_string()))?;
        out.push((record, line_no, entry));
    }
    Ok(out)
}

/// Convenience for building query context from a sample's two context parts.
pub fn query_for(code: &str, file_context: &str, function_context: &str, params: RetrievalParams) -> RetrievalQuery {
    RetrievalQuery::new(code, serialize_context(file_context, function_context), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;

    fn unit2(s: f64) -> EmbeddingVector {
        EmbeddingVector::new(vec![s, (1.0 - s * s).max(0.0).sqrt()]).unwrap()
    }

    fn mem2() -> ReflectiveMemory {
        ReflectiveMemory::new(Arc::new(HashingEmbedder::new(2).unwrap())).unwrap()
    }

    fn dyn_entry(id: &str) -> MemoryEntry {
        let mut e = MemoryEntry::dynamic(format!("problem {id}"), "", "diag", format!("fix {id}"));
        e.entry_id = id.to_string();
        e
    }

    fn static_entry(id: &str) -> MemoryEntry {
        MemoryEntry::static_guideline(id, format!("guideline {id}"), "use safe APIs", "")
    }

    fn query() -> EmbeddingVector {
        EmbeddingVector::new(vec![1.0, 0.0]).unwrap()
    }

    fn sims(set: &EvidenceSet) -> Vec<f64> {
        set.items.iter().map(|i| (i.similarity * 100.0).round() / 100.0).collect()
    }

    #[test]
    fn confident_dynamic_excludes_static() {
        let m = mem2();
        for (id, s) in [("d1", 0.95), ("d2", 0.88), ("d3", 0.40)] {
            m.deposit_with_vector(dyn_entry(id), unit2(s)).unwrap();
        }
        m.deposit_with_vector(static_entry("s1"), unit2(0.99)).unwrap();
        let p = RetrievalParams { k: 3, k_min: 1, theta: 0.70 };
        let set = m.retrieve_embedded(&query(), &p).unwrap();
        assert!(!set.fallback_used);
        assert_eq!(sims(&set), [0.95, 0.88, 0.40]);
        assert!(set.items.iter().all(|i| i.entry.tier == Tier::Dynamic));
        assert_eq!(set.dynamic_hit_count, 3);
    }

    #[test]
    fn empty_dynamic_forces_union() {
        let m = mem2();
        m.deposit_with_vector(static_entry("s1"), unit2(0.80)).unwrap();
        m.deposit_with_vector(static_entry("s2"), unit2(0.60)).unwrap();
        let p = RetrievalParams { k: 2, k_min: 1, theta: 0.70 };
        let set = m.retrieve_embedded(&query(), &p).unwrap();
        assert!(set.fallback_used);
        assert_eq!(sims(&set), [0.80, 0.60]);
        assert_eq!(set.max_dynamic_sim, 0.0);
    }

    #[test]
    fn low_dynamic_similarity_falls_back() {
        let m = mem2();
        m.deposit_with_vector(dyn_entry("d1"), unit2(0.65)).unwrap();
        m.deposit_with_vector(static_entry("s1"), unit2(0.75)).unwrap();
        let p = RetrievalParams { k: 2, k_min: 1, theta: 0.70 };
        let set = m.retrieve_embedded(&query(), &p).unwrap();
        assert!(set.fallback_used);
        assert_eq!(sims(&set), [0.75, 0.65]);
        assert_eq!(set.items[0].entry.entry_id, "s1");
    }

    #[test]
    fn both_tiers_empty() {
        let set = mem2()
            .retrieve_embedded(&query(), &RetrievalParams::default())
            .unwrap();
        assert_eq!(set, EvidenceSet::empty_fallback());
    }

    #[test]
    fn deposit_then_self_retrieve() {
        let m = ReflectiveMemory::new(Arc::new(HashingEmbedder::default())).unwrap();
        let e = MemoryEntry::dynamic("cur.execute(q + email)", "[file]\ndb.py\n", "sqli", "cur.execute(q, (email,))");
        m.deposit(e.clone()).unwrap();
        m.deposit(MemoryEntry::dynamic("int x = 1;", "", "n/a", "int x = 1;")).unwrap();
        let set = m
            .retrieve(&RetrievalQuery::new(&e.problem_code, &e.context, RetrievalParams::default()))
            .unwrap();
        assert_eq!(set.items[0].entry.entry_id, e.entry_id);
        assert!((set.items[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_deposit_is_idempotent() {
        let m = mem2();
        let e = dyn_entry("d1");
        assert_eq!(m.deposit(e.clone()).unwrap(), DepositOutcome::Inserted);
        assert_eq!(m.deposit(e).unwrap(), DepositOutcome::Duplicate);
        assert_eq!(m.dynamic_len(), 1);
    }

    #[test]
    fn unverified_dynamic_rejected() {
        let m = mem2();
        let mut e = dyn_entry("d1");
        e.verified = false;
        assert!(matches!(m.deposit(e), Err(MemoryError::Unverified(_))));
        assert_eq!(m.dynamic_len(), 0);
    }

    #[test]
    fn static_with_run_rejected() {
        let m = mem2();
        let e = static_entry("s").with_source_run(Some("run-1".into()));
        assert!(matches!(m.deposit(e), Err(MemoryError::StaticWithSourceRun(_))));
    }

    #[test]
    fn id_collision_with_other_content_rejected() {
        let m = mem2();
        m.deposit(dyn_entry("same")).unwrap();
        let mut other = MemoryEntry::dynamic("x", "", "", "y");
        other.entry_id = "same".into();
        assert!(matches!(m.deposit(other), Err(MemoryError::DuplicateId(_))));
    }

    #[test]
    fn bad_params_rejected() {
        let m = mem2();
        for p in [
            RetrievalParams { k: 0, k_min: 1, theta: 0.5 },
            RetrievalParams { k: 2, k_min: 3, theta: 0.5 },
            RetrievalParams { k: 2, k_min: 1, theta: 1.5 },
        ] {
            assert!(m.retrieve_embedded(&query(), &p).is_err());
        }
    }

    #[test]
    fn tampered_hash_rejected() {
        let m = mem2();
        let mut e = dyn_entry("d1");
        e.content_hash = "00".into();
        assert!(matches!(m.deposit(e), Err(MemoryError::HashMismatch(_))));
    }
}
