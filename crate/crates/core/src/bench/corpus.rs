//! Scenario corpus on disk.
//!
//! One directory per scenario, each holding:
//!
//! * `meta.json`: `{scenario_id, cwe_id, language, split, description}`
//! * `prompt.<ext>`: the code under test
//! * optional `file_context.txt` and `function_context.txt`
//! * optional `test_spec.json`: `{command, expected, timeout_secs}`
//!
//! Scenario ids look like `089/0-py`: CWE number, variant, language suffix.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::sample::{is_supported_cwe, normalize_cwe, CodeSample, Language};
use crate::verifier::TestSpec;

static SCENARIO_ID: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d{3})/(\d+)-(py|c|cpp)$").expect("valid regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Test,
    Val,
}

#[derive(Debug, Clone, Deserialize)]
struct ScenarioMeta {
    scenario_id: String,
    cwe_id: String,
    language: Language,
    split: Split,
    #[serde(default)]
    description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub cwe_id: String,
    pub language: Language,
    pub split: Split,
    pub prompt: String,
    pub file_context: String,
    pub function_context: String,
    pub test_spec: Option<TestSpec>,
    pub description: String,
}

impl Scenario {
    pub fn sample(&self, sample_id: impl Into<String>) -> CodeSample {
        CodeSample::new(sample_id, self.language, self.prompt.clone())
            .with_context(self.file_context.clone(), self.function_context.clone())
            .with_cwe_hint(self.cwe_id.clone())
    }
}

fn invalid(path: &Path, message: impl Into<String>) -> BenchError {
    BenchError::Invalid {
        path: path.display().to_string(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, BenchError> {
    fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_optional(path: &Path) -> Result<String, BenchError> {
    if path.exists() {
        read(path)
    } else {
        Ok(String::new())
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, BenchError> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| BenchError::Metadata {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

fn load_scenario(dir: &Path) -> Result<Scenario, BenchError> {
    let meta_path = dir.join("meta.json");
    let meta: ScenarioMeta = parse_json(&meta_path)?;

    let caps = SCENARIO_ID
        .captures(&meta.scenario_id)
        .ok_or_else(|| invalid(&meta_path, format!("malformed scenario_id `{}`", meta.scenario_id)))?;
    let cwe_id = normalize_cwe(&meta.cwe_id)
        .filter(|c| is_supported_cwe(c))
        .ok_or_else(|| invalid(&meta_path, format!("unsupported cwe_id `{}`", meta.cwe_id)))?;
    if normalize_cwe(&caps[1]).as_deref() != Some(cwe_id.as_str()) {
        return Err(invalid(&meta_path, format!("scenario_id `{}` does not match cwe_id {cwe_id}", meta.scenario_id)));
    }
    let suffix_ok = match &caps[3] {
        "py" => meta.language == Language::Python,
        "c" => matches!(meta.language, Language::C | Language::Cpp),
        _ => meta.language == Language::Cpp,
    };
    if !suffix_ok {
        return Err(invalid(
            &meta_path,
            format!("language {} inconsistent with scenario id `{}`", meta.language, meta.scenario_id),
        ));
    }

    let prompt_path = prompt_file(dir)?;
    let prompt = read(&prompt_path)?;
    if prompt.trim().is_empty() {
        return Err(invalid(&prompt_path, "prompt is empty"));
    }
    let spec_path = dir.join("test_spec.json");
    let test_spec = if spec_path.exists() {
        Some(parse_json::<TestSpec>(&spec_path)?)
    } else {
        None
    };

    Ok(Scenario {
        scenario_id: meta.scenario_id,
        cwe_id,
        language: meta.language,
        split: meta.split,
        prompt,
        file_context: read_optional(&dir.join("file_context.txt"))?,
        function_context: read_optional(&dir.join("function_context.txt"))?,
        test_spec,
        description: meta.description,
    })
}

fn prompt_file(dir: &Path) -> Result<PathBuf, BenchError> {
    let entries = fs::read_dir(dir).map_err(|source| BenchError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.file_stem().is_some_and(|s| s == "prompt"))
        .collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(invalid(dir, "no prompt file")),
        _ => Err(invalid(dir, "more than one prompt file")),
    }
}

/// Loads every scenario directory under `root`, sorted by scenario id.
pub fn load_corpus(root: &Path) -> Result<Vec<Scenario>, BenchError> {
    let entries = fs::read_dir(root).map_err(|source| BenchError::Io {
        path: root.display().to_string(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let scenario = load_scenario(&dir)?;
        if !seen.insert(scenario.scenario_id.clone()) {
            return Err(BenchError::DuplicateScenario(scenario.scenario_id));
        }
        out.push(scenario);
    }
    if out.is_empty() {
        log::warn!("corpus {} contains no scenarios", root.display());
    }
    out.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    Ok(out)
}
