//! Multi-run experiment driver.
//!
//! Each run processes every scenario `samples_per_scenario` times. Memory
//! carries over from one run to the next, so later runs see the fixes
//! deposited by earlier ones. The caller supplies a fresh engine (and
//! therefore a fresh memory) per experiment.
//!
//! Results are byte-for-byte reproducible only with `jobs == 1`: parallel
//! tasks deposit into memory and append to the audit log in a racy order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::corpus::Scenario;
use super::metrics::{compute_metrics, MetricInput, RunMetrics};
use super::retrieval::{compute_retrieval_stats, RetrievalLogEntry, RetrievalStats};
use super::BenchError;
use crate::pipeline::{AuditLog, Engine, StageTimings, TaskStatus};
use crate::provider::UsageEntry;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub samples_per_scenario: usize,
    pub jobs: usize,
    /// Where per-run memory snapshots go; no snapshots when absent.
    pub snapshot_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: 1,
            samples_per_scenario: 1,
            jobs: 1,
            snapshot_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub run: usize,
    pub scenario_id: String,
    pub sample_id: String,
    /// Absent when the task could not even be recorded.
    pub status: Option<TaskStatus>,
    pub rounds_used: usize,
    /// Set membership of the unrepaired input.
    pub base: MetricInput,
    /// Set membership of the pipeline's output.
    pub reflex: MetricInput,
    pub retrieval: Option<RetrievalLogEntry>,
    pub timings: StageTimings,
    pub usage: Vec<UsageEntry>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub tasks: Vec<TaskRecord>,
    pub base: RunMetrics,
    pub reflex: RunMetrics,
    pub retrieval: Option<RetrievalStats>,
    pub dynamic_memory_size: usize,
    pub snapshot: Option<PathBuf>,
}

impl RunResult {
    pub fn retrieval_log(&self) -> Vec<RetrievalLogEntry> {
        self.tasks.iter().filter_map(|t| t.retrieval.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn tasks(&self) -> impl Iterator<Item = &TaskRecord> {
        self.runs.iter().flat_map(|r| r.tasks.iter())
    }

    pub fn usage(&self) -> Vec<UsageEntry> {
        self.tasks().flat_map(|t| t.usage.iter().cloned()).collect()
    }

    pub fn timings(&self) -> Vec<StageTimings> {
        self.tasks().map(|t| t.timings).collect()
    }

    pub fn retrieval_log(&self) -> Vec<RetrievalLogEntry> {
        self.tasks().filter_map(|t| t.retrieval.clone()).collect()
    }

    pub fn fixed_count(&self) -> usize {
        self.tasks().filter(|t| t.status == Some(TaskStatus::Fixed)).count()
    }
}

struct WorkItem<'a> {
    scenario: &'a Scenario,
    sample_id: String,
}

/// Runs the full experiment. Per-task failures are recorded on the task and
/// never stop the experiment; only precondition, audit-chain and snapshot
/// errors do.
pub fn run_experiment(
    corpus: &[Scenario],
    engine: &Engine,
    audit: &AuditLog,
    config: &ExperimentConfig,
) -> Result<ExperimentResult, BenchError> {
    if config.runs == 0 {
        return Err(BenchError::Precondition("runs must be >= 1".into()));
    }
    if config.samples_per_scenario == 0 {
        return Err(BenchError::Precondition("samples per scenario must be >= 1".into()));
    }
    engine
        .config
        .validate()
        .map_err(|e| BenchError::Precondition(e.to_string()))?;

    let base = base_inputs(corpus, engine);
    let mut runs = Vec::with_capacity(config.runs);
    for run in 1..=config.runs {
        let items: Vec<WorkItem> = corpus
            .iter()
            .flat_map(|s| {
                (0..config.samples_per_scenario).map(move |i| WorkItem {
                    scenario: s,
                    sample_id: format!("{}#r{run}s{i}", s.scenario_id),
                })
            })
            .collect();
        let run_id = format!("run-{run}");
        let tasks = parallel_map(config.jobs, &items, |item| {
            run_one(engine, audit, run, &run_id, item, base[&item.scenario.scenario_id])
        });
        if let Some(err) = tasks.iter().find_map(|t| t.error.as_deref().filter(|e| e.starts_with("audit:"))) {
            return Err(BenchError::Audit(err.to_string()));
        }

        let snapshot = match &config.snapshot_dir {
            Some(dir) => Some(write_snapshot(engine, dir, run)?),
            None => None,
        };
        let base_m: Vec<MetricInput> = tasks.iter().map(|t| t.base).collect();
        let reflex_m: Vec<MetricInput> = tasks.iter().map(|t| t.reflex).collect();
        let log: Vec<RetrievalLogEntry> = tasks.iter().filter_map(|t| t.retrieval.clone()).collect();
        runs.push(RunResult {
            run,
            base: compute_metrics(&base_m),
            reflex: compute_metrics(&reflex_m),
            retrieval: compute_retrieval_stats(&log),
            dynamic_memory_size: engine.memory.dynamic_len(),
            snapshot,
            tasks,
        });
    }
    Ok(ExperimentResult { runs })
}

/// The unrepaired code is gated once per scenario.
fn base_inputs(corpus: &[Scenario], engine: &Engine) -> HashMap<String, MetricInput> {
    corpus
        .iter()
        .map(|s| {
            let input = match engine.verifier.gate(&s.prompt, s.language, s.test_spec.as_ref()) {
                Ok(report) => MetricInput::from_report(Some(&report)),
                Err(e) => {
                    log::warn!("baseline gate failed for {}: {e}", s.scenario_id);
                    MetricInput::FAILED
                }
            };
            (s.scenario_id.clone(), input)
        })
        .collect()
}

fn run_one(
    engine: &Engine,
    audit: &AuditLog,
    run: usize,
    run_id: &str,
    item: &WorkItem,
    base: MetricInput,
) -> TaskRecord {
    let sample = item.scenario.sample(&item.sample_id);
    let mut record = TaskRecord {
        run,
        scenario_id: item.scenario.scenario_id.clone(),
        sample_id: item.sample_id.clone(),
        status: None,
        rounds_used: 0,
        base,
        reflex: MetricInput::FAILED,
        retrieval: None,
        timings: StageTimings::default(),
        usage: Vec::new(),
        error: None,
    };
    match engine.run_task(&sample, item.scenario.test_spec.as_ref(), Some(run_id), audit) {
        Ok(result) => {
            let outcome = &result.outcome;
            record.status = Some(outcome.status);
            record.rounds_used = outcome.rounds_used;
            record.reflex = MetricInput::from_outcome(outcome);
            record.retrieval = outcome.evidence.as_ref().map(|ev| {
                RetrievalLogEntry::from_evidence(&item.sample_id, ev, outcome.status == TaskStatus::Fixed)
            });
            record.timings = result.timings;
            record.usage = result.usage;
            record.error = result.record.body.outcome.error.clone();
        }
        Err(e) => {
            log::error!("task {} failed: {e}", item.sample_id);
            record.error = Some(format!("audit: {e}"));
        }
    }
    record
}

fn write_snapshot(engine: &Engine, dir: &Path, run: usize) -> Result<PathBuf, BenchError> {
    std::fs::create_dir_all(dir).map_err(|source| BenchError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(format!("memory-run{run}.jsonl"));
    engine.memory.snapshot(&path)?;
    Ok(path)
}

/// Order-preserving map over `items` using up to `jobs` worker threads.
fn parallel_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if jobs <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}
