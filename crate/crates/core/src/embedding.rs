//! Text embeddings and an exact cosine-similarity index.
//!
//! The default [`HashingEmbedder`] lowercases the input, splits it on every
//! non-alphanumeric character, hashes each token into one of `dim` buckets and
//! L2-normalizes the resulting count vector. It is deterministic across
//! platforms and needs no model weights.
//!
//! [`VectorIndex`] is a brute-force scan. Hits are ordered by similarity
//! (descending), then by insertion sequence (most recent first), then by
//! `doc_id` (ascending), which makes every ranking total.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("duplicate document id `{0}`")]
    DuplicateDoc(String),
    #[error("insertion sequence {seq} is not greater than the last sequence {last}")]
    SequenceNotIncreasing { seq: u64, last: u64 },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::ZeroDim);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Result<Self, EmbeddingError> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Anything that can turn text into a fixed-dimension vector.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self { dim })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl Embedder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        embed(text, self.dim).expect("dim validated at construction")
    }
}

/// Hashed token-count embedding. Empty (token-free) text yields the zero vector.
pub fn embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbeddingError> {
    if dim == 0 {
        return Err(EmbeddingError::ZeroDim);
    }
    let mut counts = vec![0.0f64; dim];
    for token in tokenize(text) {
        let bucket = (fnv1a64(token.as_bytes()) % dim as u64) as usize;
        counts[bucket] += 1.0;
    }
    let norm = counts.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut counts {
            *v /= norm;
        }
    }
    EmbeddingVector::new(counts)
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Cosine similarity, clamped to `[-1, 1]`. Zero-norm operands give `0.0`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDoc {
    pub doc_id: String,
    pub vector: EmbeddingVector,
    pub inserted_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub doc_id: String,
    pub similarity: f64,
    pub inserted_seq: u64,
}

/// Ranking used everywhere a list of hits is sorted: similarity descending,
/// then most recent insertion first, then `doc_id` ascending.
pub fn rank_order(a: &ScoredHit, b: &ScoredHit) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| b.inserted_seq.cmp(&a.inserted_seq))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    docs: Vec<IndexedDoc>,
    next_seq: u64,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(Self {
            dim,
            docs: Vec::new(),
            next_seq: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.iter().any(|d| d.doc_id == doc_id)
    }

    pub fn docs(&self) -> &[IndexedDoc] {
        &self.docs
    }

    /// Inserts with the next internal sequence number and returns it.
    pub fn insert(
        &mut self,
        doc_id: impl Into<String>,
        vector: EmbeddingVector,
    ) -> Result<u64, EmbeddingError> {
        let seq = self.next_seq;
        self.insert_with_seq(doc_id, vector, seq)?;
        Ok(seq)
    }

    /// Inserts with a caller-supplied sequence number, which must exceed every
    /// sequence already present. Lets several indexes share one counter.
    pub fn insert_with_seq(
        &mut self,
        doc_id: impl Into<String>,
        vector: EmbeddingVector,
        seq: u64,
    ) -> Result<(), EmbeddingError> {
        let doc_id = doc_id.into();
        if vector.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if let Some(last) = self.docs.last() {
            if seq <= last.inserted_seq {
                return Err(EmbeddingError::SequenceNotIncreasing {
                    seq,
                    last: last.inserted_seq,
                });
            }
        }
        if self.contains(&doc_id) {
            return Err(EmbeddingError::DuplicateDoc(doc_id));
        }
        self.docs.push(IndexedDoc {
            doc_id,
            vector,
            inserted_seq: seq,
        });
        self.next_seq = seq + 1;
        Ok(())
    }

    /// Scores every document against `query`, unsorted.
    pub fn scan(&self, query: &EmbeddingVector) -> Result<Vec<ScoredHit>, EmbeddingError> {
        if query.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                actual: query.dim(),
            });
        }
        self.docs
            .iter()
            .map(|d| {
                Ok(ScoredHit {
                    doc_id: d.doc_id.clone(),
                    similarity: cosine(query, &d.vector)?,
                    inserted_seq: d.inserted_seq,
                })
            })
            .collect()
    }

    pub fn top_k(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredHit>, EmbeddingError> {
        if k == 0 {
            return Err(EmbeddingError::ZeroK);
        }
        let mut hits = self.scan(query)?;
        if hits.len() > k {
            hits.select_nth_unstable_by(k - 1, rank_order);
            hits.truncate(k);
        }
        hits.sort_by(rank_order);
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let e = embed("", 8).unwrap();
        assert_eq!(e.values(), &[0.0; 8]);
        assert_eq!(embed("  !!  ", 8).unwrap().norm(), 0.0);
    }

    #[test]
    fn case_and_punctuation_do_not_matter() {
        assert_eq!(
            embed("select select", 256).unwrap(),
            embed("SELECT  select!", 256).unwrap()
        );
    }

    #[test]
    fn nonempty_text_has_unit_norm() {
        let n = embed("sql injection fix", 256).unwrap().norm();
        assert!((n - 1.0).abs() < 1e-9, "norm {n}");
    }

    #[test]
    fn zero_dim_rejected() {
        assert_eq!(embed("x", 0), Err(EmbeddingError::ZeroDim));
        assert!(HashingEmbedder::new(0).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert_eq!(
            EmbeddingVector::new(vec![1.0, f64::NAN]),
            Err(EmbeddingError::NonFinite(1))
        );
    }

    #[test]
    fn cosine_hand_values() {
        let a = v(&[3.0, 4.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_dim_mismatch() {
        assert_eq!(
            cosine(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(EmbeddingError::DimMismatch {
                expected: 1,
                actual: 2
            })
        );
    }

    #[test]
    fn top_k_picks_best_two_of_three() {
        // query (1,0); doc vectors chosen so the cosines are 0.95, 0.88, 0.40.
        let mut idx = VectorIndex::new(2).unwrap();
        for (id, s) in [("a", 0.95f64), ("b", 0.40), ("c", 0.88)] {
            idx.insert(id, v(&[s, (1.0 - s * s).sqrt()])).unwrap();
        }
        let hits = idx.top_k(&v(&[1.0, 0.0]), 2).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert!((hits[0].similarity - 0.95).abs() < 1e-12);
        assert!((hits[1].similarity - 0.88).abs() < 1e-12);
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = VectorIndex::new(4).unwrap();
        assert!(idx.top_k(&v(&[1.0, 0.0, 0.0, 0.0]), 3).unwrap().is_empty());
    }

    #[test]
    fn identical_vectors_prefer_later_insert() {
        let mut idx = VectorIndex::new(2).unwrap();
        idx.insert("z-first", v(&[1.0, 1.0])).unwrap();
        idx.insert("a-second", v(&[1.0, 1.0])).unwrap();
        let hits = idx.top_k(&v(&[1.0, 0.5]), 1).unwrap();
        assert_eq!(hits[0].doc_id, "a-second");
    }

    #[test]
    fn equal_seq_ties_fall_back_to_doc_id() {
        let a = ScoredHit {
            doc_id: "b".into(),
            similarity: 0.5,
            inserted_seq: 3,
        };
        let b = ScoredHit {
            doc_id: "a".into(),
            ..a.clone()
        };
        assert_eq!(rank_order(&a, &b), Ordering::Greater);
    }

    #[test]
    fn index_rejects_bad_inserts() {
        let mut idx = VectorIndex::new(2).unwrap();
        idx.insert("a", v(&[1.0, 0.0])).unwrap();
        assert!(matches!(
            idx.insert("a", v(&[0.0, 1.0])),
            Err(EmbeddingError::DuplicateDoc(_))
        ));
        assert!(matches!(
            idx.insert("b", v(&[1.0])),
            Err(EmbeddingError::DimMismatch { .. })
        ));
        assert!(matches!(
            idx.insert_with_seq("c", v(&[1.0, 0.0]), 0),
            Err(EmbeddingError::SequenceNotIncreasing { .. })
        ));
        assert_eq!(idx.top_k(&v(&[1.0, 0.0]), 0), Err(EmbeddingError::ZeroK));
        assert!(idx.top_k(&v(&[1.0, 0.0, 0.0]), 1).is_err());
    }
}
