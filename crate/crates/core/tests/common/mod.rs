//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use refguard::bench::{
    build_report, emit_report, load_corpus, run_experiment, ExperimentConfig, ExperimentResult,
};
use refguard::clock::TickClock;
use refguard::embedding::HashingEmbedder;
use refguard::memory::ReflectiveMemory;
use refguard::pipeline::{AuditLog, Engine, RunConfig};
use refguard::provider::{MockProvider, MockScript};
use refguard::verifier::{Verifier, VerifierConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn reference_script() -> MockScript {
    MockScript::load(&fixtures().join("reference/script.jsonl")).expect("reference script loads")
}

pub fn seeded_memory() -> Arc<ReflectiveMemory> {
    let memory = ReflectiveMemory::new(Arc::new(HashingEmbedder::default())).expect("memory");
    memory
        .load_static_seed(&fixtures().join("static_seed.jsonl"))
        .expect("seed loads");
    Arc::new(memory)
}

pub fn verifier() -> Arc<Verifier> {
    Arc::new(
        Verifier::new(VerifierConfig::default())
            .expect("verifier")
            .with_clock(Arc::new(TickClock::new(0, 3))),
    )
}

/// A fully deterministic engine over a fresh seeded memory.
pub fn engine_with(provider: Arc<MockProvider>, max_rounds: usize) -> Engine {
    let config = RunConfig {
        max_rounds,
        ..RunConfig::default()
    };
    Engine::new(seeded_memory(), provider, verifier(), config).with_clock(Arc::new(TickClock::new(1_000, 5)))
}

pub struct ReferenceRun {
    pub result: ExperimentResult,
    pub audit_text: String,
    pub report_jsonl: Vec<u8>,
    pub report_txt: Vec<u8>,
    pub snapshots: Vec<PathBuf>,
    pub out_dir: tempfile::TempDir,
}

/// The scripted reference experiment: three scenarios, two runs, one sample
/// each, two reflection rounds at most.
pub fn run_reference_experiment() -> ReferenceRun {
    let out_dir = tempfile::tempdir().expect("tempdir");
    let corpus = load_corpus(&fixtures().join("reference/corpus")).expect("corpus loads");
    let provider = Arc::new(MockProvider::new(reference_script()).with_latency_ms(40));
    let engine = engine_with(provider, 2);
    let audit_path = out_dir.path().join("audit.jsonl");
    let audit = AuditLog::open(&audit_path).expect("audit log");
    let config = ExperimentConfig {
        runs: 2,
        samples_per_scenario: 1,
        jobs: 1,
        snapshot_dir: Some(out_dir.path().join("snapshots")),
    };
    let result = run_experiment(&corpus, &engine, &audit, &config).expect("experiment runs");
    let report = build_report(&result, engine.config.price_per_1k);
    let report_dir = out_dir.path().join("report");
    emit_report(&report, &report_dir).expect("report written");
    let snapshots = result.runs.iter().filter_map(|r| r.snapshot.clone()).collect();
    ReferenceRun {
        audit_text: std::fs::read_to_string(&audit_path).expect("audit readable"),
        report_jsonl: std::fs::read(report_dir.join("report.jsonl")).expect("jsonl"),
        report_txt: std::fs::read(report_dir.join("report.txt")).expect("txt"),
        result,
        snapshots,
        out_dir,
    }
}
