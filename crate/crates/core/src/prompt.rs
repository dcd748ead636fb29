//! Prompt rendering for the self-check and the reflection rounds, plus
//! candidate extraction from model replies.
//!
//! Templates are plain text with `{code}`, `{context}`, `{evidence}` and
//! `{history}` placeholders, substituted in a single left-to-right pass so
//! placeholder-looking text inside the code is never expanded.
//!
//! Evidence blocks are framed by `<<evidence ...>>` / `<<end evidence>>`
//! markers and every snippet line is prefixed with `| `, so a fenced block in a
//! stored fix can never be mistaken for the model's answer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::memory::EvidenceSet;
use crate::sample::CodeSample;

pub const DEFAULT_BUDGET_CHARS: usize = 16_000;

pub const DEFAULT_SELF_CHECK_TEMPLATE: &str = "\
You are a security reviewer. Decide whether the code below contains a security vulnerability.
Answer with exactly one word: SAFE or UNSAFE. Do not explain.

### Code
{code}

### Context
{context}
";

pub const DEFAULT_REFLECTION_TEMPLATE: &str = "\
The code below was flagged as potentially insecure. Reflect on it step by step:
identify the vulnerability, explain its root cause, and devise a repair that
preserves the intended behaviour.

### Code under repair
{code}

### Context
{context}

### Verified cases and secure-coding guidance
{evidence}

### Earlier reflection rounds
{history}

Finish your answer with the complete corrected code in one fenced code block
delimited by triple backticks.
";

pub const DEFAULT_NO_CASES_CLAUSE: &str =
    "(no prior cases matched; rely on established secure-coding practice)";
const NO_HISTORY_CLAUSE: &str = "(none; this is the first round)";
const EVIDENCE_OPEN: &str = "<<evidence ";
const EVIDENCE_CLOSE: &str = "<<end evidence>>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub self_check: String,
    pub reflection: String,
    pub no_cases_clause: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            self_check: DEFAULT_SELF_CHECK_TEMPLATE.to_string(),
            reflection: DEFAULT_REFLECTION_TEMPLATE.to_string(),
            no_cases_clause: DEFAULT_NO_CASES_CLAUSE.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Defaults, with either template replaced by the contents of a file.
    pub fn from_files(self_check: Option<&Path>, reflection: Option<&Path>) -> std::io::Result<Self> {
        let mut t = Self::default();
        if let Some(p) = self_check {
            t.self_check = fs::read_to_string(p)?;
        }
        if let Some(p) = reflection {
            t.reflection = fs::read_to_string(p)?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRound {
    pub round_index: usize,
    pub prompt_text: String,
    pub response_text: String,
    pub extracted_code: Option<String>,
    pub extraction_clean: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TerminalStatus {
    Fixed,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionTranscript {
    pub rounds: Vec<ReflectionRound>,
    pub terminal_status: TerminalStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptEngine {
    templates: PromptTemplates,
    budget_chars: usize,
}

impl Default for PromptEngine {
    fn default() -> Self {
        Self::new(PromptTemplates::default(), DEFAULT_BUDGET_CHARS)
    }
}

impl PromptEngine {
    pub fn new(templates: PromptTemplates, budget_chars: usize) -> Self {
        Self {
            templates,
            budget_chars,
        }
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn budget_chars(&self) -> usize {
        self.budget_chars
    }

    pub fn render_self_check(&self, sample: &CodeSample) -> String {
        self.render_budgeted(&self.templates.self_check, sample, "", "")
    }

    pub fn render_reflection(
        &self,
        sample: &CodeSample,
        evidence: &EvidenceSet,
        history: &[ReflectionRound],
    ) -> String {
        let evidence_text = if evidence.items.is_empty() {
            self.templates.no_cases_clause.clone()
        } else {
            render_evidence(evidence)
        };
        let history_text = if history.is_empty() {
            NO_HISTORY_CLAUSE.to_string()
        } else {
            render_history(history)
        };
        self.render_budgeted(&self.templates.reflection, sample, &evidence_text, &history_text)
    }

    /// Renders the template; if the result exceeds the budget, the context is
    /// cut from its tail and a marker records how much was dropped. Code,
    /// evidence and history are never truncated.
    fn render_budgeted(&self, template: &str, sample: &CodeSample, evidence: &str, history: &str) -> String {
        let context = sample.context();
        let full = substitute(template, &sample.code, &context, evidence, history);
        let full_len = full.chars().count();
        if full_len <= self.budget_chars {
            return full;
        }
        let context_len = context.chars().count();
        let fixed = full_len - context_len;
        let over = full_len - self.budget_chars;
        // The marker length depends on the dropped count; iterate until stable.
        let mut keep = context_len.saturating_sub(over);
        loop {
            let marker = truncation_marker(context_len - keep);
            let total = fixed + keep + marker.chars().count();
            if total <= self.budget_chars || keep == 0 {
                let truncated: String = context.chars().take(keep).collect::<String>() + &marker;
                return substitute(template, &sample.code, &truncated, evidence, history);
            }
            keep = keep.saturating_sub(total - self.budget_chars);
        }
    }
}

fn truncation_marker(dropped: usize) -> String {
    format!("\n[... context truncated: {dropped} characters omitted ...]\n")
}

/// Single-pass placeholder substitution.
fn substitute(template: &str, code: &str, context: &str, evidence: &str, history: &str) -> String {
    let mut out = String::with_capacity(template.len() + code.len() + context.len() + evidence.len() + history.len());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let replacement = [
            ("{code}", code),
            ("{context}", context),
            ("{evidence}", evidence),
            ("{history}", history),
        ]
        .into_iter()
        .find(|(name, _)| tail.starts_with(name));
        match replacement {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn quote_lines(text: &str, out: &mut String) {
    if text.is_empty() {
        out.push_str("| (none)\n");
        return;
    }
    for line in text.lines() {
        out.push_str("| ");
        out.push_str(line);
        out.push('\n');
    }
}

fn render_evidence(evidence: &EvidenceSet) -> String {
    let mut out = String::new();
    for (rank, item) in evidence.items.iter().enumerate() {
        let e = &item.entry;
        out.push_str(&format!(
            "{EVIDENCE_OPEN}id={} rank={} similarity={:.3} tier={} cwe={}>>\n",
            e.entry_id,
            rank + 1,
            item.similarity,
            match e.tier {
                crate::memory::Tier::Dynamic => "DYNAMIC",
                crate::memory::Tier::Static => "STATIC",
            },
            e.cwe_tag.as_deref().unwrap_or("-"),
        ));
        out.push_str("diagnosis:\n");
        quote_lines(&e.diagnosis, &mut out);
        out.push_str("fix:\n");
        quote_lines(&e.fix_code, &mut out);
        out.push_str(EVIDENCE_CLOSE);
        out.push('\n');
    }
    out
}

fn render_history(history: &[ReflectionRound]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&format!("--- round {} response ---\n", r.round_index));
        out.push_str(&r.response_text);
        if !r.response_text.ends_with('\n') {
            out.push('\n');
        }
        out.push_str(&format!("--- end of round {} ---\n", r.round_index));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceMarker {
    pub entry_id: String,
    pub rank: usize,
    pub similarity: f64,
}

/// Recovers the evidence markers from a rendered reflection prompt, in order.
pub fn parse_evidence_markers(prompt: &str) -> Vec<EvidenceMarker> {
    prompt
        .lines()
        .filter_map(|line| {
            let body = line.strip_prefix(EVIDENCE_OPEN)?.strip_suffix(">>")?;
            let mut id = None;
            let mut rank = None;
            let mut sim = None;
            for field in body.split(' ') {
                match field.split_once('=') {
                    Some(("id", v)) => id = Some(v.to_string()),
                    Some(("rank", v)) => rank = v.parse().ok(),
                    Some(("similarity", v)) => sim = v.parse().ok(),
                    _ => {}
                }
            }
            Some(EvidenceMarker {
                entry_id: id?,
                rank: rank?,
                similarity: sim?,
            })
        })
        .collect()
}

fn is_fence(line: &str) -> bool {
    let indent = line.len() - line.trim_start_matches(' ').len();
    indent <= 3 && line[indent..].starts_with("```")
}

/// Returns the last complete, non-empty fenced code block in `response`.
/// Every line of the block keeps its newline, as in a source file. The
/// boolean is `true` iff such a block was found.
pub fn extract_candidate(response: &str) -> (Option<String>, bool) {
    let mut last = None;
    let mut open: Option<Vec<&str>> = None;
    for line in response.lines() {
        match open.take() {
            None => {
                if is_fence(line) {
                    open = Some(Vec::new());
                }
            }
            Some(mut body) => {
                if is_fence(line) && line.trim() == "```" {
                    let block: String = body.iter().map(|l| format!("{l}\n")).collect();
                    if !block.trim().is_empty() {
                        last = Some(block);
                    }
                } else {
                    body.push(line);
                    open = Some(body);
                }
            }
        }
    }
    let clean = last.is_some();
    (last, clean)
}
