//! Benchmark harness: corpus loading, multi-run experiments, metrics,
//! retrieval statistics, cost accounting and reports.

pub mod accounting;
pub mod corpus;
pub mod experiment;
pub mod metrics;
pub mod report;
pub mod retrieval;

use thiserror::Error;

use crate::memory::MemoryError;

pub use accounting::{compute_accounting, stage_shares, AccountingReport, StageTime, STAGE_NAMES};
pub use corpus::{load_corpus, Scenario, Split};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentResult, RunResult, TaskRecord};
pub use metrics::{
    compute_metrics, format_delta, mean_metrics, metrics_from_counts, MeanMetrics, MetricInput, RunMetrics,
};
pub use report::{build_report, emit_report, report_jsonl, report_text, ExperimentReport, RunSummary};
pub use retrieval::{
    bucket_accuracy_from_counts, bucket_index, compute_bucket_accuracy, compute_retrieval_stats, BucketAccuracy,
    RetrievalLogEntry, RetrievalStats, SimilarityBucket, BUCKET_LABELS,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Metadata {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("duplicate scenario id `{0}`")]
    DuplicateScenario(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{0}")]
    Audit(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}
