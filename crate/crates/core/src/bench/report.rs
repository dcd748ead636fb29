//! Experiment reports: one JSON object per line for machines, aligned text
//! tables for people. Both are pure functions of the experiment result, so
//! identical runs yield identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::accounting::{compute_accounting, AccountingReport};
use super::experiment::ExperimentResult;
use super::metrics::{format_delta, mean_metrics, MeanMetrics, RunMetrics};
use super::retrieval::{compute_bucket_accuracy, compute_retrieval_stats, BucketAccuracy, RetrievalStats};
use super::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub base: RunMetrics,
    pub reflex: RunMetrics,
    pub retrieval: Option<RetrievalStats>,
    pub dynamic_memory_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunSummary>,
    pub mean_base: Option<MeanMetrics>,
    pub mean_reflex: Option<MeanMetrics>,
    pub retrieval_overall: Option<RetrievalStats>,
    pub buckets: BucketAccuracy,
    pub accounting: AccountingReport,
}

pub fn build_report(result: &ExperimentResult, price_per_1k: f64) -> ExperimentReport {
    let runs: Vec<RunSummary> = result
        .runs
        .iter()
        .map(|r| RunSummary {
            run: r.run,
            base: r.base,
            reflex: r.reflex,
            retrieval: r.retrieval,
            dynamic_memory_size: r.dynamic_memory_size,
        })
        .collect();
    let base: Vec<RunMetrics> = runs.iter().map(|r| r.base).collect();
    let reflex: Vec<RunMetrics> = runs.iter().map(|r| r.reflex).collect();
    let log = result.retrieval_log();
    let scenes = result.tasks().count();
    ExperimentReport {
        mean_base: mean_metrics(&base),
        mean_reflex: mean_metrics(&reflex),
        retrieval_overall: compute_retrieval_stats(&log),
        buckets: compute_bucket_accuracy(&log),
        accounting: compute_accounting(&result.usage(), &result.timings(), scenes, result.fixed_count(), price_per_1k),
        runs,
    }
}

/// The machine-readable report, one object per line, tagged by `kind`.
pub fn report_jsonl(report: &ExperimentReport) -> String {
    let mut lines = Vec::new();
    for r in &report.runs {
        for (variant, m) in [("base", &r.base), ("reflex", &r.reflex)] {
            lines.push(json!({"kind": "run_metrics", "run": r.run, "variant": variant, "metrics": m}));
        }
        lines.push(json!({
            "kind": "retrieval_stats",
            "run": r.run,
            "dynamic_memory_size": r.dynamic_memory_size,
            "stats": r.retrieval,
        }));
    }
    lines.push(json!({"kind": "mean_metrics", "variant": "base", "metrics": report.mean_base}));
    lines.push(json!({"kind": "mean_metrics", "variant": "reflex", "metrics": report.mean_reflex}));
    lines.push(json!({"kind": "retrieval_overall", "stats": report.retrieval_overall}));
    lines.push(json!({"kind": "bucket_accuracy", "buckets": report.buckets}));
    lines.push(json!({"kind": "accounting", "accounting": report.accounting}));
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    out
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.1}"))
}

fn sim(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn delta_opt(base: Option<f64>, value: Option<f64>) -> String {
    match (base, value) {
        (Some(b), Some(v)) => format_delta(b, v),
        (_, v) => pct(v),
    }
}

/// The human-readable report.
pub fn report_text(report: &ExperimentReport) -> String {
    let mut s = String::new();

    if let (Some(b), Some(x)) = (&report.mean_base, &report.mean_reflex) {
        let _ = writeln!(s, "Core metrics (mean over {} run(s))", b.runs);
        let _ = writeln!(s, "{:<14}{:>12}{:>18}", "Metric", "Base", "Reflex");
        let _ = writeln!(s, "{:<14}{:>12}{:>18}", "Sec_Rate (%)", pct(b.sec_rate), delta_opt(b.sec_rate, x.sec_rate));
        let _ = writeln!(s, "{:<14}{:>12}{:>18}", "Pass_Rate (%)", pct(b.pass_rate), delta_opt(b.pass_rate, x.pass_rate));
        let _ = writeln!(
            s,
            "{:<14}{:>12.1}{:>18}",
            "Unres_Count",
            b.unres_count,
            format_delta(b.unres_count, x.unres_count)
        );
        s.push('\n');
    }

    let _ = writeln!(s, "Per-run results");
    let _ = writeln!(
        s,
        "{:<6}{:>7}{:>7}{:>10}{:>10}{:>8}{:>9}",
        "Run", "Tasks", "Eff", "Pass(%)", "Sec(%)", "Unres", "AvgSim"
    );
    for r in &report.runs {
        let _ = writeln!(
            s,
            "{:<6}{:>7}{:>7}{:>10}{:>10}{:>8}{:>9}",
            r.run,
            r.reflex.n_tasks,
            r.reflex.eff_total,
            pct(r.reflex.pass_rate),
            pct(r.reflex.sec_rate),
            r.reflex.unres_count,
            sim(r.retrieval.and_then(|x| x.asim)),
        );
    }
    s.push('\n');

    let _ = writeln!(s, "Retrieval evolution");
    let _ = writeln!(
        s,
        "{:<6}{:>8}{:>6}{:>8}{:>8}{:>8}{:>8}{:>8}{:>8}",
        "Run", "Queries", "ARD", "ASim", "MSim", "mSim", "RSR(%)", "FUR(%)", "Memory"
    );
    for r in &report.runs {
        match &r.retrieval {
            Some(x) => {
                let _ = writeln!(
                    s,
                    "{:<6}{:>8}{:>6.1}{:>8}{:>8}{:>8}{:>8.1}{:>8.1}{:>8}",
                    r.run,
                    x.queries,
                    x.ard,
                    sim(x.asim),
                    sim(x.msim_max),
                    sim(x.msim_min),
                    x.rsr,
                    x.fur,
                    r.dynamic_memory_size
                );
            }
            None => {
                let _ = writeln!(s, "{:<6}{:>8}{:>54}", r.run, 0, r.dynamic_memory_size);
            }
        }
    }
    s.push('\n');

    let _ = writeln!(s, "Fix accuracy by similarity ({} retrieved documents)", report.buckets.total_docs);
    let _ = writeln!(s, "{:<12}{:>8}{:>10}{:>10}{:>14}", "Similarity", "Docs", "Ratio(%)", "Fixed", "Accuracy(%)");
    for b in &report.buckets.buckets {
        let _ = writeln!(
            s,
            "{:<12}{:>8}{:>10}{:>10}{:>14}",
            b.label,
            b.docs,
            pct(b.ratio),
            b.fixed_docs,
            pct(b.fix_accuracy)
        );
    }
    s.push('\n');

    let a = &report.accounting;
    let _ = writeln!(s, "Cost");
    let _ = writeln!(s, "{:<22}{:>14}", "Total tokens", a.usage.total_tokens);
    let _ = writeln!(s, "{:<22}{:>14.3e}", "Price per 1k tokens", a.price_per_1k);
    let _ = writeln!(s, "{:<22}{:>14.3e}", "Total cost", a.total_cost);
    let sci = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3e}"));
    let _ = writeln!(s, "{:<22}{:>14}", "Cost per scene", sci(a.cost_per_scene));
    let _ = writeln!(s, "{:<22}{:>14}", "Cost per success", sci(a.cost_per_success));
    s.push('\n');

    let _ = writeln!(s, "Stage time per scene");
    let _ = writeln!(s, "{:<26}{:>10}{:>10}", "Stage", "Avg (s)", "Share(%)");
    for t in &a.stage_times {
        let _ = writeln!(s, "{:<26}{:>10.3}{:>10}", t.stage, t.avg_secs, pct(t.share));
    }
    let _ = writeln!(s, "{:<26}{:>10.3}{:>10}", "Total", a.avg_total_secs, "100.0");
    s
}

fn write(path: &Path, text: &str) -> Result<(), BenchError> {
    fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `report.jsonl` and `report.txt` into `out_dir`.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
    fs::create_dir_all(out_dir).map_err(|source| BenchError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let jsonl = out_dir.join("report.jsonl");
    let text = out_dir.join("report.txt");
    write(&jsonl, &report_jsonl(report))?;
    write(&text, &report_text(report))?;
    Ok(vec![jsonl, text])
}
