use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The eight weakness classes the benchmark corpus and rule set cover.
pub const SUPPORTED_CWES: [&str; 8] = [
    "CWE-089", "CWE-125", "CWE-079", "CWE-476", "CWE-416", "CWE-022", "CWE-787", "CWE-190",
];

/// Normalizes `89`, `089`, `CWE-89` and `cwe-089` to `CWE-089`.
pub fn normalize_cwe(raw: &str) -> Option<String> {
    let trimmed = raw.trim();
    let digits = trimmed
        .strip_prefix("CWE-")
        .or_else(|| trimmed.strip_prefix("cwe-"))
        .unwrap_or(trimmed);
    let n: u32 = digits.parse().ok()?;
    Some(format!("CWE-{n:03}"))
}

pub fn is_supported_cwe(raw: &str) -> bool {
    normalize_cwe(raw).is_some_and(|c| SUPPORTED_CWES.contains(&c.as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    C,
    Cpp,
    Python,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Python => "python",
        }
    }

    pub fn file_extension(self) -> &'static str {
        match self {
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Python => "py",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "c" => Ok(Language::C),
            "cpp" | "c++" | "cxx" => Ok(Language::Cpp),
            "python" | "py" => Ok(Language::Python),
            other => Err(format!("unsupported language `{other}`")),
        }
    }
}

/// One unit of work: the code under review plus its surrounding context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub sample_id: String,
    pub language: Language,
    pub code: String,
    #[serde(default)]
    pub file_context: String,
    #[serde(default)]
    pub function_context: String,
    #[serde(default)]
    pub cwe_hint: Option<String>,
}

impl CodeSample {
    pub fn new(sample_id: impl Into<String>, language: Language, code: impl Into<String>) -> Self {
        Self {
            sample_id: sample_id.into(),
            language,
            code: code.into(),
            file_context: String::new(),
            function_context: String::new(),
            cwe_hint: None,
        }
    }

    pub fn with_context(
        mut self,
        file_context: impl Into<String>,
        function_context: impl Into<String>,
    ) -> Self {
        self.file_context = file_context.into();
        self.function_context = function_context.into();
        self
    }

    pub fn with_cwe_hint(mut self, cwe: impl Into<String>) -> Self {
        self.cwe_hint = Some(cwe.into());
        self
    }

    /// Serialized context `c`: file-level then function-level context. Empty
    /// when both parts are empty.
    pub fn context(&self) -> String {
        serialize_context(&self.file_context, &self.function_context)
    }
}

pub fn serialize_context(file_context: &str, function_context: &str) -> String {
    let mut out = String::new();
    if !file_context.is_empty() {
        out.push_str("[file]\n");
        out.push_str(file_context);
        if !file_context.ends_with('\n') {
            out.push('\n');
        }
    }
    if !function_context.is_empty() {
        out.push_str("[function]\n");
        out.push_str(function_context);
        if !function_context.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}
