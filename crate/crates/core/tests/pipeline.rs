//! End-to-end behaviour of the engine, the experiment runner and replay.

mod common;

use std::sync::Arc;

use refguard::bench::{load_corpus, run_experiment, BenchError, ExperimentConfig};
use refguard::memory::Tier;
use refguard::pipeline::audit::parse_audit_text;
use refguard::pipeline::{replay, verify_audit_text, AuditLog, Engine, TaskStatus};
use refguard::provider::{MockProvider, MockScript, Stage};

fn replay_engine(provider: Arc<dyn refguard::provider::ChatProvider>) -> Result<Engine, refguard::pipeline::PipelineError> {
    let engine = common::engine_with(Arc::new(MockProvider::new(MockScript::default())), 2);
    Ok(Engine { provider, ..engine })
}

#[test]
fn reference_experiment_counts_and_snapshots() {
    let run = common::run_reference_experiment();
    assert_eq!(run.result.runs.len(), 2);
    for r in &run.result.runs {
        assert_eq!(r.tasks.len(), 3);
        assert_eq!(r.base.n_tasks, 3);
        assert_eq!(r.reflex.n_tasks, 3);
    }
    assert_eq!(run.snapshots.len(), 2);
    for p in &run.snapshots {
        assert!(p.exists(), "{} missing", p.display());
    }
    // The fix from run 1 stays in memory for run 2.
    assert!(run.result.runs[0].dynamic_memory_size >= 1);
    assert!(run.result.runs[1].dynamic_memory_size >= run.result.runs[0].dynamic_memory_size);

    let check = verify_audit_text(&run.audit_text);
    assert!(check.valid);
    assert_eq!(check.records, 6);
    assert!(!run.report_txt.is_empty());
}

#[test]
fn zero_samples_is_a_precondition_error() {
    let corpus = load_corpus(&common::fixtures().join("reference/corpus")).unwrap();
    let engine = common::engine_with(Arc::new(MockProvider::new(common::reference_script())), 2);
    let audit = AuditLog::in_memory();
    for config in [
        ExperimentConfig { samples_per_scenario: 0, ..Default::default() },
        ExperimentConfig { runs: 0, ..Default::default() },
    ] {
        match run_experiment(&corpus, &engine, &audit, &config) {
            Err(BenchError::Precondition(_)) => {}
            other => panic!("expected precondition error, got {:?}", other.map(|_| ())),
        }
    }
    assert!(audit.is_empty());
}

#[test]
fn replay_detects_a_changed_reply() {
    let run = common::run_reference_experiment();
    let records = parse_audit_text(&run.audit_text).unwrap();

    // Change one word of the first fix reply; the code block stays the same.
    let mut script = common::reference_script();
    let fix = script
        .entries
        .iter_mut()
        .find(|e| e.stage == Stage::Reflection && e.reply.contains("insert_user_message_in_db"))
        .expect("fix entry");
    fix.reply = fix.reply.replacen("placeholders", "parameters", 1);
    let text = script.to_jsonl();

    let report = replay(&records, MockScript::parse(&text).unwrap(), replay_engine).unwrap();
    let d = report.divergence.expect("divergence");
    assert!(d.call_index.is_some());
    assert_eq!(d.stage, Some(Stage::Reflection));
}

#[test]
fn replay_of_nothing_matches() {
    let report = replay(&[], MockScript::default(), replay_engine).unwrap();
    assert!(report.matches());
    assert!(report.outcomes.is_empty());
}

#[test]
fn fixed_task_deposits_exactly_one_dynamic_entry() {
    let corpus = load_corpus(&common::fixtures().join("reference/corpus")).unwrap();
    let fixable = corpus.iter().find(|s| s.scenario_id == "089/1-py").unwrap();
    let engine = common::engine_with(Arc::new(MockProvider::new(common::reference_script())), 2);
    let audit = AuditLog::in_memory();
    let before = engine.memory.dynamic_len();
    let result = engine
        .run_task(&fixable.sample("s0"), fixable.test_spec.as_ref(), None, &audit)
        .unwrap();
    assert_eq!(result.outcome.status, TaskStatus::Fixed);
    assert_eq!(engine.memory.dynamic_len(), before + 1);
    let stored = engine.memory.entries(Tier::Dynamic);
    assert_eq!(stored.last().unwrap().fix_code, result.outcome.final_code);
    let expected = std::fs::read_to_string(common::fixtures().join("reference/fixed.py")).unwrap();
    assert_eq!(result.outcome.final_code, expected);
}

#[test]
fn usage_ledger_matches_audit_totals() {
    let run = common::run_reference_experiment();
    let records = parse_audit_text(&run.audit_text).unwrap();
    let from_audit: u64 = records.iter().map(|r| r.body.usage.total_tokens).sum();
    let from_runs: u64 = run.result.usage().iter().map(|u| u.usage.total_tokens()).sum();
    assert_eq!(from_runs, from_audit);
}
