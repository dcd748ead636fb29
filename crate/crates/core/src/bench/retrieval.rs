//! Retrieval-evolution statistics and similarity-bucket fix accuracy.

use serde::{Deserialize, Serialize};

use crate::memory::EvidenceSet;

/// One retrieval as seen by the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLogEntry {
    pub task_id: String,
    pub similarities: Vec<f64>,
    pub fallback_used: bool,
    /// Whether the task that issued this retrieval ended FIXED.
    pub fixed: bool,
}

impl RetrievalLogEntry {
    pub fn from_evidence(task_id: impl Into<String>, evidence: &EvidenceSet, fixed: bool) -> Self {
        Self {
            task_id: task_id.into(),
            similarities: evidence.similarities(),
            fallback_used: evidence.fallback_used,
            fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalStats {
    pub queries: usize,
    /// Mean number of documents per retrieval.
    pub ard: f64,
    /// Mean similarity over every retrieved document.
    pub asim: Option<f64>,
    pub msim_max: Option<f64>,
    pub msim_min: Option<f64>,
    /// Percent of retrievals answered by the dynamic tier alone.
    pub rsr: f64,
    /// Percent of retrievals that fell back; always `100 - rsr`.
    pub fur: f64,
}

/// `None` for an empty log.
pub fn compute_retrieval_stats(log: &[RetrievalLogEntry]) -> Option<RetrievalStats> {
    if log.is_empty() {
        return None;
    }
    let queries = log.len();
    let sims: Vec<f64> = log.iter().flat_map(|e| e.similarities.iter().copied()).collect();
    let successes = log.iter().filter(|e| !e.fallback_used).count();
    let rsr = successes as f64 / queries as f64 * 100.0;
    Some(RetrievalStats {
        queries,
        ard: sims.len() as f64 / queries as f64,
        asim: (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64),
        msim_max: sims.iter().copied().reduce(f64::max),
        msim_min: sims.iter().copied().reduce(f64::min),
        rsr,
        fur: 100.0 - rsr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityBucket {
    pub label: String,
    pub docs: usize,
    pub fixed_docs: usize,
    /// Percent of all retrieved documents; absent when nothing was retrieved.
    pub ratio: Option<f64>,
    /// Percent of this bucket's documents whose task ended FIXED; absent for
    /// an empty bucket.
    pub fix_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub total_docs: usize,
    pub buckets: Vec<SimilarityBucket>,
}

pub const BUCKET_LABELS: [&str; 4] = ["0.95-1.00", "0.85-0.95", "0.70-0.85", "<0.70"];

/// Lower bounds inclusive, upper exclusive; the top bucket includes 1.00.
pub fn bucket_index(similarity: f64) -> usize {
    if similarity >= 0.95 {
        0
    } else if similarity >= 0.85 {
        1
    } else if similarity >= 0.70 {
        2
    } else {
        3
    }
}

pub fn compute_bucket_accuracy(log: &[RetrievalLogEntry]) -> BucketAccuracy {
    let mut docs = [0usize; 4];
    let mut fixed = [0usize; 4];
    for entry in log {
        for &s in &entry.similarities {
            let b = bucket_index(s);
            docs[b] += 1;
            if entry.fixed {
                fixed[b] += 1;
            }
        }
    }
    bucket_accuracy_from_counts(docs, fixed)
}

pub fn bucket_accuracy_from_counts(docs: [usize; 4], fixed: [usize; 4]) -> BucketAccuracy {
    let total_docs: usize = docs.iter().sum();
    let buckets = (0..4)
        .map(|i| SimilarityBucket {
            label: BUCKET_LABELS[i].to_string(),
            docs: docs[i],
            fixed_docs: fixed[i],
            ratio: (total_docs > 0).then(|| docs[i] as f64 / total_docs as f64 * 100.0),
            fix_accuracy: (docs[i] > 0).then(|| fixed[i] as f64 / docs[i] as f64 * 100.0),
        })
        .collect();
    BucketAccuracy { total_docs, buckets }
}
