//! Hash-chained audit records.
//!
//! Each record is serialized as one compact JSON line with fields in
//! declaration order. `this_hash` is the SHA-256 of that serialization with
//! `this_hash` itself omitted; `prev_hash` links to the previous record, and
//! the first record links to 64 zeros.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PipelineError, TaskStatus};
use crate::memory::{DepositOutcome, EvidenceSet, Tier};
use crate::provider::{Stage, UsageEntry};
use crate::sample::CodeSample;
use crate::self_check::Verdict;
use crate::verifier::{Finding, ScanTool, TestFailure, TestSpec, VerificationReport};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditParams {
    pub k: usize,
    pub k_min: usize,
    pub theta_sim: f64,
    pub max_rounds: usize,
    pub model_name: String,
    pub self_check_model: String,
    pub prompt_budget_chars: usize,
    pub theta_model: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvidenceItem {
    pub entry_id: String,
    pub tier: Tier,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvidence {
    pub items: Vec<AuditEvidenceItem>,
    pub fallback_used: bool,
    pub dynamic_hit_count: usize,
    pub max_dynamic_sim: f64,
}

impl From<&EvidenceSet> for AuditEvidence {
    fn from(set: &EvidenceSet) -> Self {
        Self {
            items: set
                .items
                .iter()
                .map(|i| AuditEvidenceItem {
                    entry_id: i.entry.entry_id.clone(),
                    tier: i.entry.tier,
                    similarity: i.similarity,
                })
                .collect(),
            fallback_used: set.fallback_used,
            dynamic_hit_count: set.dynamic_hit_count,
            max_dynamic_sim: set.max_dynamic_sim,
        }
    }
}

/// Gate result without timings, so records do not depend on the clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub compiled: bool,
    pub tests_passed: Option<bool>,
    pub test_failure: Option<TestFailure>,
    pub findings: Vec<Finding>,
    pub tool: ScanTool,
    pub secure: bool,
}

impl From<&VerificationReport> for VerificationSummary {
    fn from(r: &VerificationReport) -> Self {
        Self {
            compiled: r.compiled,
            tests_passed: r.tests_passed,
            test_failure: r.test_failure,
            findings: r.findings.clone(),
            tool: r.tool,
            secure: r.secure(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRound {
    pub round_index: usize,
    pub prompt: String,
    pub response: String,
    pub extracted_code: Option<String>,
    pub extraction_clean: bool,
    pub verification: Option<VerificationSummary>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditStageUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Token counts only; wall time is reported by the bench accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditUsage {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub per_stage: BTreeMap<Stage, AuditStageUsage>,
}

impl AuditUsage {
    pub fn from_entries(entries: &[UsageEntry]) -> Self {
        let mut out = Self::default();
        for e in entries {
            let s = out.per_stage.entry(e.stage).or_default();
            s.calls += 1;
            s.input_tokens += e.usage.input_tokens;
            s.output_tokens += e.usage.output_tokens;
            out.calls += 1;
            out.input_tokens += e.usage.input_tokens;
            out.output_tokens += e.usage.output_tokens;
        }
        out.total_tokens = out.input_tokens + out.output_tokens;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub status: TaskStatus,
    pub final_code: String,
    pub rounds_used: usize,
    pub deposited_entry: Option<String>,
    pub deposit: Option<DepositOutcome>,
    pub error: Option<String>,
}

/// Everything hashed into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBody {
    pub record_id: u64,
    pub prev_hash: String,
    pub run_id: Option<String>,
    pub sample: CodeSample,
    pub test_spec: Option<TestSpec>,
    pub params: AuditParams,
    pub verdict: Option<Verdict>,
    pub evidence: Option<AuditEvidence>,
    pub rounds: Vec<AuditRound>,
    pub verification: Option<VerificationSummary>,
    pub usage: AuditUsage,
    pub outcome: AuditOutcome,
}

impl AuditBody {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("audit body serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    #[serde(flatten)]
    pub body: AuditBody,
    pub this_hash: String,
}

impl AuditRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit record serializes")
    }

    /// Every evidence id and every prompt/response pair, in order.
    pub fn evidence_ids(&self) -> Vec<String> {
        self.body
            .evidence
            .iter()
            .flat_map(|e| e.items.iter().map(|i| i.entry_id.clone()))
            .collect()
    }

    /// Provider replies in call order: the self-check reply, then each round.
    pub fn responses(&self) -> Vec<(Stage, String)> {
        let mut out = Vec::new();
        if let Some(v) = &self.body.verdict {
            out.push((Stage::SelfCheck, v.raw_response.clone()));
        }
        out.extend(
            self.body
                .rounds
                .iter()
                .map(|r| (Stage::Reflection, r.response.clone())),
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChainCheck {
    pub valid: bool,
    /// 0-based index of the first record that fails verification.
    pub first_broken: Option<usize>,
    pub records: usize,
}

impl ChainCheck {
    fn ok(records: usize) -> Self {
        Self { valid: true, first_broken: None, records }
    }

    fn broken(at: usize, records: usize) -> Self {
        Self { valid: false, first_broken: Some(at), records }
    }
}

/// Checks every `this_hash` and every `prev_hash` link.
pub fn verify_audit_chain(records: &[AuditRecord]) -> ChainCheck {
    let mut prev = GENESIS_HASH;
    for (i, r) in records.iter().enumerate() {
        if r.body.prev_hash != prev || r.body.digest() != r.this_hash {
            return ChainCheck::broken(i, records.len());
        }
        prev = &r.this_hash;
    }
    ChainCheck::ok(records.len())
}

/// Verifies a serialized log. Besides the hash chain, each line must be the
/// exact canonical serialization of the record it parses to, so no byte of
/// the file can change without detection.
pub fn verify_audit_text(text: &str) -> ChainCheck {
    verify_audit_bytes(text.as_bytes())
}

/// [`verify_audit_text`] over raw bytes; a line that is not UTF-8 is broken.
pub fn verify_audit_bytes(bytes: &[u8]) -> ChainCheck {
    let mut lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        lines.pop();
    }
    let mut prev = GENESIS_HASH.to_string();
    for (i, raw) in lines.iter().enumerate() {
        let Ok(line) = std::str::from_utf8(raw) else {
            return ChainCheck::broken(i, lines.len());
        };
        let Ok(record) = serde_json::from_str::<AuditRecord>(line) else {
            return ChainCheck::broken(i, lines.len());
        };
        if record.to_line() != line
            || record.body.prev_hash != prev
            || record.body.digest() != record.this_hash
        {
            return ChainCheck::broken(i, lines.len());
        }
        prev = record.this_hash;
    }
    ChainCheck::ok(lines.len())
}

pub fn parse_audit_text(text: &str) -> Result<Vec<AuditRecord>, PipelineError> {
    text.split_terminator('\n')
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| PipelineError::AuditParse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_audit_text(&text)
}

#[derive(Debug)]
struct LogState {
    records: Vec<AuditRecord>,
    file: Option<(PathBuf, File)>,
}

/// Append-only audit chain, optionally mirrored to a file. Appends are
/// serialized; chain order is append order.
#[derive(Debug)]
pub struct AuditLog {
    state: Mutex<LogState>,
}

impl Default for AuditLog {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self {
            state: Mutex::new(LogState {
                records: Vec::new(),
                file: None,
            }),
        }
    }

    /// Opens (or creates) a log file and continues its chain. An existing
    /// file must verify before anything is appended to it.
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let io = |e| PipelineError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let records = if path.exists() {
            let text = fs::read_to_string(path).map_err(io)?;
            let check = verify_audit_text(&text);
            if !check.valid {
                return Err(PipelineError::BrokenChain {
                    path: path.display().to_string(),
                    index: check.first_broken.unwrap_or(0),
                });
            }
            parse_audit_text(&text)?
        } else {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(io)?;
            }
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self {
            state: Mutex::new(LogState {
                records,
                file: Some((path.to_path_buf(), file)),
            }),
        })
    }

    /// Fills in `record_id` and `prev_hash`, hashes, stores and writes.
    pub fn append(&self, mut body: AuditBody) -> Result<AuditRecord, PipelineError> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        body.record_id = state.records.len() as u64;
        body.prev_hash = state
            .records
            .last()
            .map_or_else(|| GENESIS_HASH.to_string(), |r| r.this_hash.clone());
        let record = AuditRecord {
            this_hash: body.digest(),
            body,
        };
        if let Some((path, file)) = state.file.as_mut() {
            let mut line = record.to_line();
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| PipelineError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
        }
        state.records.push(record.clone());
        Ok(record)
    }

    pub fn records(&self) -> Vec<AuditRecord> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).records.clone()
    }

    pub fn len(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_text(&self) -> String {
        self.records()
            .iter()
            .map(|r| r.to_line() + "\n")
            .collect()
    }
}
