//! Token cost and stage-time accounting.

use serde::{Deserialize, Serialize};

use crate::pipeline::StageTimings;
use crate::provider::{usage_total, UsageEntry, UsageTotals};

pub const STAGE_NAMES: [&str; 4] = [
    "RAG Retrieval",
    "LLM Inference",
    "Reflection Verification",
    "Post-processing",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTime {
    pub stage: String,
    /// Mean seconds per scene.
    pub avg_secs: f64,
    /// Percent of the total; absent when no time was recorded at all.
    pub share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub scenes: usize,
    pub successes: usize,
    pub usage: UsageTotals,
    pub price_per_1k: f64,
    pub total_cost: f64,
    pub cost_per_scene: Option<f64>,
    pub cost_per_success: Option<f64>,
    pub stage_times: Vec<StageTime>,
    pub avg_total_secs: f64,
}

/// Percent share of each value in their sum; `None` when the sum is zero.
pub fn stage_shares(values: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = values.iter().sum();
    (total > 0.0).then(|| values.iter().map(|v| v / total * 100.0).collect())
}

/// Aggregates a usage ledger and per-task timings. `scenes` is the number of
/// tasks the averages are taken over; `successes` the number of FIXED tasks.
pub fn compute_accounting(
    usage: &[UsageEntry],
    timings: &[StageTimings],
    scenes: usize,
    successes: usize,
    price_per_1k: f64,
) -> AccountingReport {
    let totals = usage_total(usage, price_per_1k);
    let mut sum = StageTimings::default();
    for t in timings {
        sum += *t;
    }
    let per_scene = |ms: u64| {
        if scenes == 0 {
            0.0
        } else {
            ms as f64 / 1000.0 / scenes as f64
        }
    };
    let avgs = [
        per_scene(sum.retrieval_ms),
        per_scene(sum.inference_ms),
        per_scene(sum.verification_ms),
        per_scene(sum.postprocess_ms),
    ];
    let shares = stage_shares(&avgs);
    let stage_times = STAGE_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| StageTime {
            stage: name.to_string(),
            avg_secs: avgs[i],
            share: shares.as_ref().map(|s| s[i]),
        })
        .collect();
    AccountingReport {
        scenes,
        successes,
        total_cost: totals.cost,
        cost_per_scene: (scenes > 0).then(|| totals.cost / scenes as f64),
        cost_per_success: (successes > 0).then(|| totals.cost / successes as f64),
        usage: totals,
        price_per_1k,
        stage_times,
        avg_total_secs: avgs.iter().sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ChatUsage, Stage};

    #[test]
    fn reference_cost_table() {
        let usage = [UsageEntry {
            stage: Stage::Reflection,
            usage: ChatUsage { input_tokens: 44_762, output_tokens: 0, wall_ms: 0 },
        }];
        let r = compute_accounting(&usage, &[], 125, 0, 1.5e-3);
        assert!((r.total_cost - 6.71e-2).abs() < 1e-4);
        assert!((r.cost_per_scene.unwrap() - 5.37e-4).abs() < 1e-6);
        assert_eq!(r.cost_per_success, None);
    }

    #[test]
    fn reference_stage_shares() {
        let shares = stage_shares(&[0.8, 24.3, 3.2, 0.5]).unwrap();
        let total: f64 = [0.8, 24.3, 3.2, 0.5].iter().sum();
        assert!((total - 28.8).abs() < 1e-9);
        for (got, want) in shares.iter().zip([2.8, 84.4, 11.1, 1.7]) {
            assert!((got - want).abs() <= 0.1, "{got} vs {want}");
        }
        assert!((shares.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn zero_ledger() {
        let r = compute_accounting(&[], &[], 0, 0, 1.5e-3);
        assert_eq!(r.total_cost, 0.0);
        assert_eq!(r.cost_per_scene, None);
        assert!(r.stage_times.iter().all(|s| s.share.is_none()));
    }

    #[test]
    fn timings_average_per_scene() {
        let t = StageTimings { retrieval_ms: 800, inference_ms: 24_300, verification_ms: 3_200, postprocess_ms: 500 };
        let r = compute_accounting(&[], &[t, t], 2, 2, 1.0);
        assert!((r.avg_total_secs - 28.8).abs() < 1e-9);
        assert!((r.stage_times[1].share.unwrap() - 84.375).abs() < 1e-9);
    }
}
