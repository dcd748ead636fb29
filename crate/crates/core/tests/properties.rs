//! Property tests for the numeric building blocks.

use proptest::prelude::*;

use refguard::bench::{
    bucket_index, compute_bucket_accuracy, compute_metrics, compute_retrieval_stats, MetricInput, RetrievalLogEntry,
};
use refguard::embedding::{cosine, embed, EmbeddingVector, VectorIndex};

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..24).prop_flat_map(|d| (vector(d), vector(d)))
}

fn log_entry() -> impl Strategy<Value = RetrievalLogEntry> {
    (prop::collection::vec(-1.0f64..=1.0, 0..6), any::<bool>(), any::<bool>()).prop_map(|(s, f, x)| {
        RetrievalLogEntry {
            task_id: "t".into(),
            similarities: s,
            fallback_used: f,
            fixed: x,
        }
    })
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded((a, b) in pair()) {
        let va = EmbeddingVector::new(a).unwrap();
        let vb = EmbeddingVector::new(b).unwrap();
        let ab = cosine(&va, &vb).unwrap();
        let ba = cosine(&vb, &va).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn cosine_ignores_positive_scale((a, b) in pair(), scale in 0.01f64..100.0) {
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let s1 = cosine(&EmbeddingVector::new(a).unwrap(), &EmbeddingVector::new(b.clone()).unwrap()).unwrap();
        let s2 = cosine(&EmbeddingVector::new(scaled).unwrap(), &EmbeddingVector::new(b).unwrap()).unwrap();
        prop_assert!((s1 - s2).abs() < 1e-9);
    }

    #[test]
    fn embedding_is_deterministic_and_unit(text in ".{0,80}", dim in 1usize..64) {
        let a = embed(&text, dim).unwrap();
        let b = embed(&text, dim).unwrap();
        prop_assert_eq!(&a, &b);
        let n = a.norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn top_k_matches_full_sort(
        docs in prop::collection::vec(prop::collection::vec(-3i32..=3, 4), 0..40),
        q in prop::collection::vec(-3i32..=3, 4),
        k in 1usize..8,
    ) {
        let as_vec = |v: &Vec<i32>| EmbeddingVector::new(v.iter().map(|x| *x as f64).collect()).unwrap();
        let mut index = VectorIndex::new(4).unwrap();
        for (i, d) in docs.iter().enumerate() {
            index.insert(format!("d{i:02}"), as_vec(d)).unwrap();
        }
        let qv = as_vec(&q);
        let got = index.top_k(&qv, k).unwrap();
        let mut all: Vec<(f64, usize)> = docs
            .iter()
            .enumerate()
            .map(|(i, d)| (cosine(&as_vec(d), &qv).unwrap(), i))
            .collect();
        // Highest similarity first; ties go to the later insertion.
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(b.1.cmp(&a.1)));
        all.truncate(k);
        let want: Vec<String> = all.iter().map(|(_, i)| format!("d{i:02}")).collect();
        let got_ids: Vec<String> = got.iter().map(|h| h.doc_id.clone()).collect();
        prop_assert_eq!(got_ids, want);
    }

    #[test]
    fn metric_identities(flags in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>()), 0..80)) {
        let inputs: Vec<MetricInput> = flags
            .iter()
            .map(|(c, p, s)| MetricInput { compiled: *c, passed: *p, secure: *s })
            .collect();
        let m = compute_metrics(&inputs);
        prop_assert!(m.sec_count <= m.eff_total && m.eff_total <= m.n_tasks);
        prop_assert!(m.pass_count <= m.eff_total);
        prop_assert_eq!(m.unres_count, m.n_tasks - m.eff_total);
        prop_assert_eq!(m.sec_rate.is_none(), m.eff_total == 0);
        if let Some(r) = m.sec_rate {
            prop_assert!((r - 100.0 * m.sec_count as f64 / m.eff_total as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn retrieval_stats_match_brute_force(log in prop::collection::vec(log_entry(), 0..30)) {
        match compute_retrieval_stats(&log) {
            None => prop_assert!(log.is_empty()),
            Some(s) => {
                prop_assert_eq!(s.rsr + s.fur, 100.0);
                let mut sims = Vec::new();
                for e in &log {
                    sims.extend(e.similarities.iter().copied());
                }
                prop_assert!((s.ard - sims.len() as f64 / log.len() as f64).abs() < 1e-12);
                let ok = log.iter().filter(|e| !e.fallback_used).count();
                prop_assert!((s.rsr - 100.0 * ok as f64 / log.len() as f64).abs() < 1e-12);
                if sims.is_empty() {
                    prop_assert!(s.asim.is_none() && s.msim_max.is_none() && s.msim_min.is_none());
                } else {
                    let (lo, hi, mean) = (s.msim_min.unwrap(), s.msim_max.unwrap(), s.asim.unwrap());
                    prop_assert!(lo <= mean + 1e-12 && mean <= hi + 1e-12);
                    prop_assert_eq!(hi, sims.iter().copied().fold(f64::MIN, f64::max));
                    prop_assert_eq!(lo, sims.iter().copied().fold(f64::MAX, f64::min));
                }
            }
        }
    }

    #[test]
    fn buckets_partition_every_document(log in prop::collection::vec(log_entry(), 0..30)) {
        let b = compute_bucket_accuracy(&log);
        let total: usize = log.iter().map(|e| e.similarities.len()).sum();
        prop_assert_eq!(b.total_docs, total);
        prop_assert_eq!(b.buckets.iter().map(|x| x.docs).sum::<usize>(), total);
        for e in &log {
            for s in &e.similarities {
                let hits = [s >= &0.95, (0.85..0.95).contains(s), (0.70..0.85).contains(s), s < &0.70];
                prop_assert_eq!(hits.iter().filter(|h| **h).count(), 1);
                prop_assert!(hits[bucket_index(*s)]);
            }
        }
        if total > 0 {
            let sum: f64 = b.buckets.iter().map(|x| x.ratio.unwrap()).sum();
            prop_assert!((sum - 100.0).abs() < 1e-9);
        }
        for x in &b.buckets {
            prop_assert_eq!(x.fix_accuracy.is_none(), x.docs == 0);
        }
    }
}
