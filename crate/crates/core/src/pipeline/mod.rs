//! The closed repair loop.
//!
//! A task goes through the self-check first. A SAFE verdict is confirmed by
//! the verification gate and passed through unchanged; an UNSAFE verdict
//! retrieves evidence from memory and runs up to `max_rounds` reflection
//! rounds, gating each extracted candidate. The first candidate that passes
//! the gate wins and is deposited into the dynamic memory tier. Every task,
//! whatever its outcome, appends one record to the audit chain.

pub mod audit;
pub mod replay;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::memory::{
    DepositOutcome, EvidenceSet, MemoryEntry, MemoryError, ReflectiveMemory, RetrievalParams,
    RetrievalQuery, DEFAULT_K, DEFAULT_K_MIN, DEFAULT_THETA,
};
use crate::prompt::{extract_candidate, PromptEngine, ReflectionRound, DEFAULT_BUDGET_CHARS};
use crate::provider::{ChatProvider, ChatRequest, MeteredProvider, Stage, UsageEntry, UsageLedger};
use crate::self_check::{self, Verdict};
use crate::verifier::{TestSpec, VerificationReport, Verifier};

pub use crate::sample::{CodeSample, Language};
pub use audit::{
    verify_audit_bytes, verify_audit_chain, verify_audit_text, AuditBody, AuditLog, AuditOutcome, AuditParams,
    AuditRecord, AuditRound, AuditUsage, ChainCheck, VerificationSummary,
};
pub use replay::{replay, Divergence, ReplayReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid sample `{0}`: code is empty")]
    EmptySample(String),
    #[error("audit log {path} is broken at record {index}")]
    BrokenChain { path: String, index: usize },
    #[error("audit log line {line}: {message}")]
    AuditParse { line: usize, message: String },
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub k_min: usize,
    pub theta_sim: f64,
    pub max_rounds: usize,
    pub model_name: String,
    /// Model used for the self-check; defaults to `model_name`.
    pub self_check_model: Option<String>,
    pub price_per_1k: f64,
    pub prompt_budget_chars: usize,
    /// Opaque model/prompting parameters (temperature, seed, ...), recorded in
    /// every audit record and otherwise passed through untouched.
    pub theta_model: BTreeMap<String, serde_json::Value>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            k_min: DEFAULT_K_MIN,
            theta_sim: DEFAULT_THETA,
            max_rounds: 3,
            model_name: "mock-model".into(),
            self_check_model: None,
            price_per_1k: 1.5e-3,
            prompt_budget_chars: DEFAULT_BUDGET_CHARS,
            theta_model: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.max_rounds == 0 {
            return Err(PipelineError::Config("max_rounds must be >= 1".into()));
        }
        if !self.price_per_1k.is_finite() || self.price_per_1k < 0.0 {
            return Err(PipelineError::Config("price_per_1k must be non-negative".into()));
        }
        self.retrieval_params()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        RetrievalParams {
            k: self.k,
            k_min: self.k_min,
            theta: self.theta_sim,
        }
    }

    pub fn self_check_model(&self) -> &str {
        self.self_check_model.as_deref().unwrap_or(&self.model_name)
    }

    fn audit_params(&self) -> AuditParams {
        AuditParams {
            k: self.k,
            k_min: self.k_min,
            theta_sim: self.theta_sim,
            max_rounds: self.max_rounds,
            model_name: self.model_name.clone(),
            self_check_model: self.self_check_model().to_string(),
            prompt_budget_chars: self.prompt_budget_chars,
            theta_model: self.theta_model.clone(),
        }
    }

    fn apply_audit_params(&mut self, p: &AuditParams) {
        self.k = p.k;
        self.k_min = p.k_min;
        self.theta_sim = p.theta_sim;
        self.max_rounds = p.max_rounds;
        self.model_name = p.model_name.clone();
        self.self_check_model = Some(p.self_check_model.clone());
        self.prompt_budget_chars = p.prompt_budget_chars;
        self.theta_model = p.theta_model.clone();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskStatus {
    SafePassthrough,
    Fixed,
    Unresolved,
    /// A provider or verifier failure stopped the task.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub status: TaskStatus,
    pub final_code: String,
    pub rounds_used: usize,
    pub verification: Option<VerificationReport>,
    pub evidence: Option<EvidenceSet>,
}

/// Wall time spent per processing stage of one task, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieval_ms: u64,
    pub inference_ms: u64,
    pub verification_ms: u64,
    pub postprocess_ms: u64,
}

impl StageTimings {
    pub fn total_ms(&self) -> u64 {
        self.retrieval_ms + self.inference_ms + self.verification_ms + self.postprocess_ms
    }
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.retrieval_ms += o.retrieval_ms;
        self.inference_ms += o.inference_ms;
        self.verification_ms += o.verification_ms;
        self.postprocess_ms += o.postprocess_ms;
    }
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub outcome: TaskOutcome,
    pub record: AuditRecord,
    pub usage: Vec<UsageEntry>,
    pub timings: StageTimings,
}

/// Everything a task needs. Cheap to clone; all heavy state is shared.
#[derive(Clone)]
pub struct Engine {
    pub memory: Arc<ReflectiveMemory>,
    pub provider: Arc<dyn ChatProvider>,
    /// Separate backend for the self-check; `provider` when absent.
    pub self_check_provider: Option<Arc<dyn ChatProvider>>,
    pub verifier: Arc<Verifier>,
    pub prompts: PromptEngine,
    pub clock: Arc<dyn Clock>,
    pub config: RunConfig,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("memory", &self.memory)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Accumulates the pieces of one task while it runs.
struct TaskTrace {
    verdict: Option<Verdict>,
    evidence: Option<EvidenceSet>,
    rounds: Vec<AuditRound>,
    report: Option<VerificationReport>,
    timings: StageTimings,
    deposit: Option<(String, DepositOutcome)>,
}

impl Engine {
    /// An engine with the default prompt templates and the system clock.
    pub fn new(
        memory: Arc<ReflectiveMemory>,
        provider: Arc<dyn ChatProvider>,
        verifier: Arc<Verifier>,
        config: RunConfig,
    ) -> Self {
        let prompts = PromptEngine::new(Default::default(), config.prompt_budget_chars);
        Self {
            memory,
            provider,
            self_check_provider: None,
            verifier,
            prompts,
            clock: Arc::new(crate::clock::SystemClock),
            config,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    fn elapsed_since(&self, start: u64) -> u64 {
        self.clock.now_millis().saturating_sub(start)
    }

    /// Runs one task end to end and appends its audit record to `audit`.
    pub fn run_task(
        &self,
        sample: &CodeSample,
        test_spec: Option<&TestSpec>,
        run_id: Option<&str>,
        audit: &AuditLog,
    ) -> Result<TaskResult, PipelineError> {
        self.config.validate()?;
        if sample.code.trim().is_empty() {
            return Err(PipelineError::EmptySample(sample.sample_id.clone()));
        }
        let ledger = UsageLedger::new();
        let mut trace = TaskTrace {
            verdict: None,
            evidence: None,
            rounds: Vec::new(),
            report: None,
            timings: StageTimings::default(),
            deposit: None,
        };

        let result = self.drive(sample, test_spec, run_id, &ledger, &mut trace);
        let (status, final_code, error) = match result {
            Ok((status, code)) => (status, code, None),
            Err(message) => (TaskStatus::Aborted, sample.code.clone(), Some(message)),
        };
        let rounds_used = trace.rounds.len();

        let t = self.clock.now_millis();
        let usage = ledger.entries();
        let body = AuditBody {
            record_id: 0,
            prev_hash: String::new(),
            run_id: run_id.map(str::to_string),
            sample: sample.clone(),
            test_spec: test_spec.cloned(),
            params: self.config.audit_params(),
            verdict: trace.verdict.clone(),
            evidence: trace.evidence.as_ref().map(Into::into),
            rounds: trace.rounds,
            verification: trace.report.as_ref().map(Into::into),
            usage: AuditUsage::from_entries(&usage),
            outcome: AuditOutcome {
                status,
                final_code: final_code.clone(),
                rounds_used,
                deposited_entry: trace.deposit.as_ref().map(|d| d.0.clone()),
                deposit: trace.deposit.as_ref().map(|d| d.1),
                error,
            },
        };
        let record = audit.append(body)?;
        trace.timings.postprocess_ms += self.elapsed_since(t);

        Ok(TaskResult {
            outcome: TaskOutcome {
                status,
                final_code,
                rounds_used,
                verification: trace.report,
                evidence: trace.evidence,
            },
            record,
            usage,
            timings: trace.timings,
        })
    }

    /// The decision logic. `Err` carries the abort reason.
    fn drive(
        &self,
        sample: &CodeSample,
        test_spec: Option<&TestSpec>,
        run_id: Option<&str>,
        ledger: &UsageLedger,
        trace: &mut TaskTrace,
    ) -> Result<(TaskStatus, String), String> {
        let check_backend = self
            .self_check_provider
            .as_deref()
            .unwrap_or(self.provider.as_ref());
        let check_provider = MeteredProvider {
            inner: check_backend,
            ledger,
            clock: &self.clock,
        };
        let provider = MeteredProvider {
            inner: self.provider.as_ref(),
            ledger,
            clock: &self.clock,
        };

        let t = self.clock.now_millis();
        let verdict = self_check::check(sample, &self.prompts, self.config.self_check_model(), &check_provider);
        trace.timings.inference_ms += self.elapsed_since(t);
        let verdict = verdict.map_err(|e| format!("self-check: {e}"))?;
        let safe = verdict.is_safe();
        trace.verdict = Some(verdict);

        if safe {
            let report = self.timed_gate(&sample.code, sample, test_spec, trace)?;
            if report.verified() {
                // Safe cases are kept as their own fix, with no diagnosis.
                let entry = MemoryEntry::dynamic(&sample.code, sample.context(), "", &sample.code);
                self.timed_deposit(entry, sample, run_id, trace)?;
            }
            trace.report = Some(report);
            return Ok((TaskStatus::SafePassthrough, sample.code.clone()));
        }

        let t = self.clock.now_millis();
        let query = RetrievalQuery::new(&sample.code, sample.context(), self.config.retrieval_params());
        let evidence = self.memory.retrieve(&query);
        trace.timings.retrieval_ms += self.elapsed_since(t);
        let evidence = evidence.map_err(|e| format!("retrieval: {e}"))?;
        trace.evidence = Some(evidence.clone());

        let mut history: Vec<ReflectionRound> = Vec::new();
        let mut last_candidate: Option<String> = None;
        for round_index in 1..=self.config.max_rounds {
            let prompt = self.prompts.render_reflection(sample, &evidence, &history);
            let t = self.clock.now_millis();
            let reply = provider.complete(&ChatRequest::single(
                Stage::Reflection,
                &self.config.model_name,
                prompt.clone(),
            ));
            trace.timings.inference_ms += self.elapsed_since(t);
            let reply = reply.map_err(|e| format!("reflection round {round_index}: {e}"))?;

            let t = self.clock.now_millis();
            let (candidate, clean) = extract_candidate(&reply.text);
            trace.timings.postprocess_ms += self.elapsed_since(t);

            let report = match &candidate {
                Some(code) => Some(self.timed_gate(code, sample, test_spec, trace)?),
                None => None,
            };
            let fixed = report.as_ref().is_some_and(VerificationReport::verified);
            trace.rounds.push(AuditRound {
                round_index,
                prompt: prompt.clone(),
                response: reply.text.clone(),
                extracted_code: candidate.clone(),
                extraction_clean: clean,
                verification: report.as_ref().map(Into::into),
            });
            history.push(ReflectionRound {
                round_index,
                prompt_text: prompt,
                response_text: reply.text.clone(),
                extracted_code: candidate.clone(),
                extraction_clean: clean,
            });
            if report.is_some() {
                trace.report = report;
            }
            if let Some(code) = candidate {
                if fixed {
                    let entry = MemoryEntry::dynamic(&sample.code, sample.context(), &reply.text, &code);
                    self.timed_deposit(entry, sample, run_id, trace)?;
                    return Ok((TaskStatus::Fixed, code));
                }
                last_candidate = Some(code);
            }
        }
        Ok((
            TaskStatus::Unresolved,
            last_candidate.unwrap_or_else(|| sample.code.clone()),
        ))
    }

    fn timed_gate(
        &self,
        code: &str,
        sample: &CodeSample,
        test_spec: Option<&TestSpec>,
        trace: &mut TaskTrace,
    ) -> Result<VerificationReport, String> {
        let t = self.clock.now_millis();
        let report = self.verifier.gate(code, sample.language, test_spec);
        trace.timings.verification_ms += self.elapsed_since(t);
        report.map_err(|e| format!("verification: {e}"))
    }

    fn timed_deposit(
        &self,
        entry: MemoryEntry,
        sample: &CodeSample,
        run_id: Option<&str>,
        trace: &mut TaskTrace,
    ) -> Result<(), String> {
        let t = self.clock.now_millis();
        let entry = entry
            .with_cwe(sample.cwe_hint.clone())
            .with_source_run(run_id.map(str::to_string))
            .with_created_at(t);
        let id = entry.entry_id.clone();
        let outcome = self.memory.deposit(entry);
        trace.timings.postprocess_ms += self.elapsed_since(t);
        let outcome = outcome.map_err(|e| format!("deposit: {e}"))?;
        trace.deposit = Some((id, outcome));
        Ok(())
    }

    /// A copy of this engine configured with the parameters a record was
    /// produced under.
    pub fn with_audit_params(&self, params: &AuditParams) -> Engine {
        let mut engine = self.clone();
        engine.config.apply_audit_params(params);
        engine.prompts = PromptEngine::new(self.prompts.templates().clone(), params.prompt_budget_chars);
        engine
    }
}
