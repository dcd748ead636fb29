//! Corpus loader behaviour on the shipped fixtures and on malformed input.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use refguard::bench::{load_corpus, BenchError};

fn write_scenario(root: &Path, dir: &str, meta: &str, prompt_name: &str) {
    let d = root.join(dir);
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join("meta.json"), meta).unwrap();
    fs::write(d.join(prompt_name), "def f():\n    return 1\n").unwrap();
}

const META_089: &str =
    r#"{"scenario_id": "089/0-py", "cwe_id": "CWE-089", "language": "python", "split": "test", "description": "d"}"#;

#[test]
fn shipped_corpus_has_21_scenarios_over_8_cwes() {
    let corpus = load_corpus(&common::fixtures().join("corpus")).unwrap();
    assert_eq!(corpus.len(), 21);
    let cwes: BTreeSet<_> = corpus.iter().map(|s| s.cwe_id.clone()).collect();
    assert_eq!(cwes.len(), 8);
    let ids: Vec<_> = corpus.iter().map(|s| s.scenario_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for s in &corpus {
        assert!(!s.prompt.trim().is_empty(), "{} has an empty prompt", s.scenario_id);
        assert!(!s.file_context.is_empty(), "{} lacks file context", s.scenario_id);
    }
}

#[test]
fn every_shipped_prompt_compiles() {
    let verifier = common::verifier();
    for s in load_corpus(&common::fixtures().join("corpus")).unwrap() {
        let c = verifier.compile_check(&s.prompt, s.language).unwrap();
        assert!(c.ok, "{} does not compile: {}", s.scenario_id, c.diagnostics);
    }
}

#[test]
fn empty_directory_gives_empty_corpus() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_corpus(dir.path()).unwrap().is_empty());
}

#[test]
fn duplicate_ids_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario(dir.path(), "a", META_089, "prompt.py");
    write_scenario(dir.path(), "b", META_089, "prompt.py");
    match load_corpus(dir.path()) {
        Err(BenchError::DuplicateScenario(id)) => assert_eq!(id, "089/0-py"),
        other => panic!("expected duplicate error, got {other:?}"),
    }
}

#[test]
fn malformed_metadata_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    write_scenario(dir.path(), "a", "{\n  \"scenario_id\": 12,\n}", "prompt.py");
    match load_corpus(dir.path()) {
        Err(BenchError::Metadata { line, path, .. }) => {
            assert!(line >= 2, "line {line}");
            assert!(path.ends_with("meta.json"));
        }
        other => panic!("expected metadata error, got {other:?}"),
    }
}

#[test]
fn bad_ids_and_mismatches_are_rejected() {
    let cases = [
        r#"{"scenario_id": "89/0-py", "cwe_id": "CWE-089", "language": "python", "split": "test", "description": "d"}"#,
        r#"{"scenario_id": "089/0-py", "cwe_id": "CWE-125", "language": "python", "split": "test", "description": "d"}"#,
        r#"{"scenario_id": "089/0-py", "cwe_id": "CWE-089", "language": "c", "split": "test", "description": "d"}"#,
        r#"{"scenario_id": "999/0-py", "cwe_id": "CWE-999", "language": "python", "split": "test", "description": "d"}"#,
    ];
    for meta in cases {
        let dir = tempfile::tempdir().unwrap();
        write_scenario(dir.path(), "a", meta, "prompt.py");
        assert!(load_corpus(dir.path()).is_err(), "accepted {meta}");
    }
}

#[test]
fn missing_prompt_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().join("a");
    fs::create_dir_all(&d).unwrap();
    fs::write(d.join("meta.json"), META_089).unwrap();
    assert!(load_corpus(dir.path()).is_err());
}
