//! Core quality metrics over a set of tasks.
//!
//! `T` is every task, `C` the tasks whose output compiles, `P ⊆ C` those that
//! also pass their functional test, `S ⊆ C` those that are also free of
//! static-analysis findings. Rates are taken over `C`, never over `T`.

use serde::{Deserialize, Serialize};

use crate::pipeline::{TaskOutcome, TaskStatus};
use crate::verifier::VerificationReport;

/// Set membership of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricInput {
    pub compiled: bool,
    pub passed: bool,
    pub secure: bool,
}

impl MetricInput {
    /// A task with no usable output.
    pub const FAILED: MetricInput = MetricInput {
        compiled: false,
        passed: false,
        secure: false,
    };

    /// Tests that were not specified count as passed.
    pub fn from_report(report: Option<&VerificationReport>) -> Self {
        match report {
            Some(r) if r.compiled => Self {
                compiled: true,
                passed: r.tests_passed != Some(false),
                secure: r.secure(),
            },
            _ => Self::FAILED,
        }
    }

    pub fn from_outcome(outcome: &TaskOutcome) -> Self {
        if outcome.status == TaskStatus::Aborted {
            return Self::FAILED;
        }
        Self::from_report(outcome.verification.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub n_tasks: usize,
    pub eff_total: usize,
    pub pass_count: usize,
    pub sec_count: usize,
    pub unres_count: usize,
    /// Percent; absent when nothing compiled.
    pub sec_rate: Option<f64>,
    pub pass_rate: Option<f64>,
}

pub fn compute_metrics(inputs: &[MetricInput]) -> RunMetrics {
    let n_tasks = inputs.len();
    let eff_total = inputs.iter().filter(|i| i.compiled).count();
    let pass_count = inputs.iter().filter(|i| i.compiled && i.passed).count();
    let sec_count = inputs.iter().filter(|i| i.compiled && i.secure).count();
    metrics_from_counts(n_tasks, eff_total, pass_count, sec_count)
}

pub fn metrics_from_counts(n_tasks: usize, eff_total: usize, pass_count: usize, sec_count: usize) -> RunMetrics {
    let rate = |n: usize| (eff_total > 0).then(|| n as f64 / eff_total as f64 * 100.0);
    RunMetrics {
        n_tasks,
        eff_total,
        pass_count,
        sec_count,
        unres_count: n_tasks - eff_total,
        sec_rate: rate(sec_count),
        pass_rate: rate(pass_count),
    }
}

/// Per-field means over several runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub runs: usize,
    pub n_tasks: f64,
    pub eff_total: f64,
    pub pass_count: f64,
    pub sec_count: f64,
    pub unres_count: f64,
    /// Mean over the runs where the rate is defined.
    pub sec_rate: Option<f64>,
    pub pass_rate: Option<f64>,
}

pub fn mean_metrics(runs: &[RunMetrics]) -> Option<MeanMetrics> {
    if runs.is_empty() {
        return None;
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&RunMetrics) -> usize| runs.iter().map(|r| f(r) as f64).sum::<f64>() / n;
    let mean_opt = |f: fn(&RunMetrics) -> Option<f64>| {
        let vals: Vec<f64> = runs.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Some(MeanMetrics {
        runs: runs.len(),
        n_tasks: mean(|r| r.n_tasks),
        eff_total: mean(|r| r.eff_total),
        pass_count: mean(|r| r.pass_count),
        sec_count: mean(|r| r.sec_count),
        unres_count: mean(|r| r.unres_count),
        sec_rate: mean_opt(|r| r.sec_rate),
        pass_rate: mean_opt(|r| r.pass_rate),
    })
}

/// `"96.6 (↑2.9)"`: the second value to one decimal with the signed change
/// from the first. A change that rounds to zero is shown as `→0.0`.
pub fn format_delta(base: f64, value: f64) -> String {
    let delta = ((value - base) * 10.0).round() / 10.0;
    let arrow = if delta > 0.0 {
        '↑'
    } else if delta < 0.0 {
        '↓'
    } else {
        '→'
    };
    format!("{value:.1} ({arrow}{:.1})", delta.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let m = metrics_from_counts(25, 22, 21, 20);
        assert_eq!(m.eff_total, 22);
        assert_eq!(m.unres_count, 3);
        assert!((m.pass_rate.unwrap() - 95.454_545_454_545_45).abs() < 1e-9);
        assert!((m.sec_rate.unwrap() - 100.0 * 20.0 / 22.0).abs() < 1e-9);
    }

    #[test]
    fn all_clean() {
        let inputs = vec![MetricInput { compiled: true, passed: true, secure: true }; 25];
        let m = compute_metrics(&inputs);
        assert_eq!(m.sec_rate, Some(100.0));
        assert_eq!(m.unres_count, 0);
    }

    #[test]
    fn nothing_compiled_has_no_rates() {
        let m = compute_metrics(&[MetricInput::FAILED; 4]);
        assert_eq!((m.sec_rate, m.pass_rate, m.unres_count), (None, None, 4));
        assert!(mean_metrics(&[]).is_none());
    }

    #[test]
    fn delta_formatting() {
        assert_eq!(format_delta(93.7, 96.6), "96.6 (↑2.9)");
        assert_eq!(format_delta(95.2, 94.9), "94.9 (↓0.3)");
        assert_eq!(format_delta(3.0, 1.9), "1.9 (↓1.1)");
        assert_eq!(format_delta(88.0, 88.0), "88.0 (→0.0)");
    }

    #[test]
    fn means_skip_undefined_rates() {
        let a = metrics_from_counts(2, 2, 2, 1);
        let b = metrics_from_counts(2, 0, 0, 0);
        let m = mean_metrics(&[a, b]).unwrap();
        assert_eq!(m.sec_rate, Some(50.0));
        assert_eq!(m.eff_total, 1.0);
    }
}
