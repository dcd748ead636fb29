//! Re-executes recorded tasks against a mock script and checks that every
//! recorded decision comes out the same.

use std::sync::Arc;

use serde::Serialize;

use super::audit::{AuditLog, AuditOutcome, AuditRecord};
use super::{Engine, PipelineError};
use crate::provider::{ChatProvider, MockProvider, MockScript, Stage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Index of the record whose replay diverged.
    pub record_index: usize,
    /// Provider call (0-based, within the task) where the replies first
    /// differ; absent when all replies matched but a derived field did not.
    pub call_index: Option<usize>,
    pub stage: Option<Stage>,
    pub field: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub outcomes: Vec<AuditOutcome>,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.divergence.is_none()
    }
}

/// Replays `records` in order. `make_engine` receives the scripted provider and
/// must return an engine whose memory is in the state the original run started
/// from (typically: fresh, with the same static seed). Stops at the first
/// divergence.
pub fn replay<F>(
    records: &[AuditRecord],
    script: MockScript,
    make_engine: F,
) -> Result<ReplayReport, PipelineError>
where
    F: FnOnce(Arc<dyn ChatProvider>) -> Result<Engine, PipelineError>,
{
    let mut report = ReplayReport {
        outcomes: Vec::new(),
        divergence: None,
    };
    if records.is_empty() {
        return Ok(report);
    }
    let provider: Arc<dyn ChatProvider> = Arc::new(MockProvider::new(script));
    let mut base = make_engine(provider.clone())?;
    base.provider = provider;
    base.self_check_provider = None;
    let scratch = AuditLog::in_memory();

    for (i, recorded) in records.iter().enumerate() {
        let engine = base.with_audit_params(&recorded.body.params);
        let result = engine.run_task(
            &recorded.body.sample,
            recorded.body.test_spec.as_ref(),
            recorded.body.run_id.as_deref(),
            &scratch,
        )?;
        if let Some(d) = compare(i, recorded, &result.record) {
            report.divergence = Some(d);
            return Ok(report);
        }
        report.outcomes.push(result.record.body.outcome.clone());
    }
    Ok(report)
}

fn compare(index: usize, expected: &AuditRecord, actual: &AuditRecord) -> Option<Divergence> {
    let div = |call_index, stage, field: &str, e: String, a: String| Divergence {
        record_index: index,
        call_index,
        stage,
        field: field.to_string(),
        expected: e,
        actual: a,
    };

    let exp_calls = expected.responses();
    let act_calls = actual.responses();
    for (call, pair) in exp_calls.iter().zip(&act_calls).enumerate() {
        if pair.0 != pair.1 {
            return Some(div(
                Some(call),
                Some(pair.0 .0),
                "response",
                pair.0 .1.clone(),
                pair.1 .1.clone(),
            ));
        }
    }
    if exp_calls.len() != act_calls.len() {
        let call = exp_calls.len().min(act_calls.len());
        let stage = exp_calls.get(call).or(act_calls.get(call)).map(|c| c.0);
        let show = |c: Option<&(Stage, String)>| c.map_or_else(|| "<no call>".into(), |c| c.1.clone());
        return Some(div(
            Some(call),
            stage,
            "call count",
            show(exp_calls.get(call)),
            show(act_calls.get(call)),
        ));
    }

    let e = &expected.body;
    let a = &actual.body;
    macro_rules! field {
        ($name:ident) => {
            if e.$name != a.$name {
                return Some(div(None, None, stringify!($name), to_json(&e.$name), to_json(&a.$name)));
            }
        };
    }
    field!(verdict);
    field!(evidence);
    field!(rounds);
    field!(verification);
    field!(usage);
    field!(outcome);
    None
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_default()
}
