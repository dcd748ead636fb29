//! LLM backends and token accounting.
//!
//! [`ChatProvider`] is the only seam through which the engine talks to a model.
//! [`MockProvider`] replays a script of canned replies; [`HttpProvider`] speaks
//! a minimal chat-completions style JSON protocol.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("chat request has no messages")]
    EmptyMessages,
    #[error("mock script exhausted: no remaining entry for stage {stage} (call #{call})")]
    ScriptExhausted { stage: Stage, call: usize },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    SelfCheck,
    Reflection,
    VerifyAssist,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::SelfCheck, Stage::Reflection, Stage::VerifyAssist];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SelfCheck => "SELF_CHECK",
            Stage::Reflection => "REFLECTION",
            Stage::VerifyAssist => "VERIFY_ASSIST",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_name: String,
    pub stage: Stage,
}

impl ChatRequest {
    pub fn single(stage: Stage, model_name: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::user(prompt)],
            model_name: model_name.into(),
            stage,
        }
    }

    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub wall_ms: u64,
}

impl ChatUsage {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::AddAssign for ChatUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input_tokens += rhs.input_tokens;
        self.output_tokens += rhs.output_tokens;
        self.wall_ms += rhs.wall_ms;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: ChatUsage,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError>;
}

/// `ceil(chars / 4)`.
pub fn token_estimate(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub stage: Stage,
    /// Only matches requests whose prompt contains this substring.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub matcher: Option<String>,
    pub reply: String,
}

impl ScriptEntry {
    pub fn new(stage: Stage, reply: impl Into<String>) -> Self {
        Self {
            stage,
            matcher: None,
            reply: reply.into(),
        }
    }

    pub fn matching(stage: Stage, matcher: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            stage,
            matcher: Some(matcher.into()),
            reply: reply.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub entries: Vec<ScriptEntry>,
}

impl MockScript {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries }
    }

    /// Reads a JSON Lines script: `{"stage": "...", "match": "...", "reply": "..."}`.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
            entries.push(entry);
        }
        Ok(Self { entries })
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("script entry serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCall {
    pub stage: Stage,
    pub script_index: usize,
}

#[derive(Debug)]
struct MockState {
    consumed: Vec<bool>,
    calls: Vec<MockCall>,
}

/// Scripted provider. Each call consumes the first unconsumed script entry
/// whose stage equals the request's stage and whose matcher (if any) occurs in
/// the prompt. Usage is synthesized with [`token_estimate`].
#[derive(Debug)]
pub struct MockProvider {
    script: MockScript,
    latency_ms: u64,
    state: Mutex<MockState>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        let n = script.entries.len();
        Self {
            script,
            latency_ms: 0,
            state: Mutex::new(MockState {
                consumed: vec![false; n],
                calls: Vec::new(),
            }),
        }
    }

    /// Reported (not slept) latency per call.
    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).calls.clone()
    }

    pub fn remaining(&self) -> usize {
        let state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.consumed.iter().filter(|c| !**c).count()
    }
}

impl ChatProvider for MockProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        if request.messages.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let prompt = request.prompt_text();
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let call = state.calls.len();
        let found = self.script.entries.iter().enumerate().position(|(i, e)| {
            !state.consumed[i]
                && e.stage == request.stage
                && e.matcher.as_deref().is_none_or(|m| prompt.contains(m))
        });
        let Some(idx) = found else {
            return Err(ProviderError::ScriptExhausted {
                stage: request.stage,
                call,
            });
        };
        state.consumed[idx] = true;
        state.calls.push(MockCall {
            stage: request.stage,
            script_index: idx,
        });
        let reply = self.script.entries[idx].reply.clone();
        let input_tokens = request
            .messages
            .iter()
            .map(|m| token_estimate(&m.content))
            .sum();
        Ok(Completion {
            usage: ChatUsage {
                input_tokens,
                output_tokens: token_estimate(&reply),
                wall_ms: self.latency_ms,
            },
            text: reply,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpProviderConfig {
    /// Full URL of the chat endpoint, e.g. `https://host/v1/chat/completions`.
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub auth_env: Option<String>,
    /// Dotted path to the reply text in the response JSON.
    pub text_path: String,
    pub input_tokens_path: String,
    pub output_tokens_path: String,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for HttpProviderConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080/v1/chat/completions".into(),
            auth_env: Some("REFGUARD_API_KEY".into()),
            text_path: "choices.0.message.content".into(),
            input_tokens_path: "usage.prompt_tokens".into(),
            output_tokens_path: "usage.completion_tokens".into(),
            timeout_secs: 60,
            retries: 2,
        }
    }
}

/// Chat client for any endpoint accepting `{model, messages: [{role, content}]}`.
pub struct HttpProvider {
    config: HttpProviderConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.config.base_url)
            .finish_non_exhaustive()
    }
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        if config.base_url.is_empty() {
            return Err(ProviderError::Config("base_url is empty".into()));
        }
        let token = match &config.auth_env {
            Some(var) => std::env::var(var).ok(),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            token,
            agent,
        })
    }

    fn attempt(&self, body: &str) -> Result<String, (bool, ProviderError)> {
        let mut req = self
            .agent
            .post(&self.config.base_url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body)
            .map_err(|e| (true, ProviderError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, ProviderError::Transport(e.to_string())))?;
        match status {
            200..=299 => Ok(text),
            500..=599 | 429 => Err((true, ProviderError::Transport(format!("HTTP {status}")))),
            _ => Err((false, ProviderError::Transport(format!("HTTP {status}: {text}")))),
        }
    }
}

impl ChatProvider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        if request.messages.is_empty() {
            return Err(ProviderError::EmptyMessages);
        }
        let body = serde_json::json!({
            "model": request.model_name,
            "messages": request.messages,
        })
        .to_string();
        let started = Instant::now();
        let mut last = None;
        let mut raw = None;
        for _ in 0..=self.config.retries {
            match self.attempt(&body) {
                Ok(text) => {
                    raw = Some(text);
                    break;
                }
                Err((retryable, err)) => {
                    last = Some(err);
                    if !retryable {
                        break;
                    }
                }
            }
        }
        let raw = match raw {
            Some(r) => r,
            None => return Err(last.unwrap_or(ProviderError::Transport("no attempt made".into()))),
        };
        let json: serde_json::Value =
            serde_json::from_str(&raw).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let text = json_path(&json, &self.config.text_path)
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                ProviderError::BadResponse(format!("no string at `{}`", self.config.text_path))
            })?
            .to_string();
        let input_tokens = json_path(&json, &self.config.input_tokens_path)
            .and_then(|v| v.as_u64())
            .unwrap_or_else(|| request.messages.iter().map(|m| token_estimate(&m.content)).sum());
        let output_tokens = json_path(&json, &self.config.output_tokens_path)
            .and_then(|v| v.as_u64())
            .unwrap_or_else(|| token_estimate(&text));
        Ok(Completion {
            text,
            usage: ChatUsage {
                input_tokens,
                output_tokens,
                wall_ms: started.elapsed().as_millis() as u64,
            },
        })
    }
}

/// Resolves a dotted path (`choices.0.message.content`) in a JSON value.
pub fn json_path<'a>(value: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .try_fold(value, |v, seg| match v {
            serde_json::Value::Array(items) => items.get(seg.parse::<usize>().ok()?),
            serde_json::Value::Object(map) => map.get(seg),
            _ => None,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageEntry {
    pub stage: Stage,
    pub usage: ChatUsage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageTotals {
    pub per_stage: BTreeMap<Stage, StageTotals>,
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub wall_ms: u64,
    pub cost: f64,
}

/// Append-only record of every provider call. Appends are serialized.
#[derive(Debug, Default)]
pub struct UsageLedger {
    entries: Mutex<Vec<UsageEntry>>,
}

impl UsageLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, stage: Stage, usage: ChatUsage) {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(UsageEntry { stage, usage });
    }

    pub fn extend(&self, other: &[UsageEntry]) {
        self.entries
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .extend_from_slice(other);
    }

    pub fn entries(&self) -> Vec<UsageEntry> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn totals(&self, price_per_1k: f64) -> UsageTotals {
        usage_total(&self.entries(), price_per_1k)
    }
}

/// Per-stage and grand totals; `cost = total_tokens * price_per_1k / 1000`.
pub fn usage_total(entries: &[UsageEntry], price_per_1k: f64) -> UsageTotals {
    let mut out = UsageTotals::default();
    for e in entries {
        let s = out.per_stage.entry(e.stage).or_default();
        s.calls += 1;
        s.input_tokens += e.usage.input_tokens;
        s.output_tokens += e.usage.output_tokens;
        s.total_tokens += e.usage.total_tokens();
        s.wall_ms += e.usage.wall_ms;
    }
    for s in out.per_stage.values() {
        out.calls += s.calls;
        out.input_tokens += s.input_tokens;
        out.output_tokens += s.output_tokens;
        out.total_tokens += s.total_tokens;
        out.wall_ms += s.wall_ms;
    }
    out.cost = cost_of(out.total_tokens, price_per_1k);
    out
}

pub fn cost_of(tokens: u64, price_per_1k: f64) -> f64 {
    tokens as f64 * price_per_1k / 1000.0
}

/// Wraps a provider so that each call is timed with the injected clock and
/// logged to a ledger. The clock's reading replaces the backend's wall time so
/// scripted runs stay reproducible.
pub struct MeteredProvider<'a> {
    pub inner: &'a dyn ChatProvider,
    pub ledger: &'a UsageLedger,
    pub clock: &'a Arc<dyn Clock>,
}

impl MeteredProvider<'_> {
    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, ProviderError> {
        let start = self.clock.now_millis();
        let mut completion = self.inner.complete(request)?;
        let elapsed = self.clock.now_millis().saturating_sub(start);
        completion.usage.wall_ms = completion.usage.wall_ms.max(elapsed);
        self.ledger.record(request.stage, completion.usage);
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(token_estimate(""), 0);
        assert_eq!(token_estimate("SAFE"), 1);
        assert_eq!(token_estimate("UNSAFE"), 2);
        assert_eq!(token_estimate("abcdefgh"), 2);
        assert_eq!(token_estimate("abcdefghi"), 3);
    }

    #[test]
    fn mock_returns_scripted_reply_with_estimated_usage() {
        let mock = MockProvider::new(MockScript::new(vec![ScriptEntry::new(Stage::SelfCheck, "SAFE")]));
        let prompt = "Answer SAFE or UNSAFE.\nx=1"; // 26 chars
        let c = mock
            .complete(&ChatRequest::single(Stage::SelfCheck, "m", prompt))
            .unwrap();
        assert_eq!(c.text, "SAFE");
        assert_eq!(c.usage.input_tokens, 7);
        assert_eq!(c.usage.output_tokens, 1);
    }

    #[test]
    fn mock_errors_are_distinct() {
        let mock = MockProvider::new(MockScript::default());
        let empty = ChatRequest {
            messages: vec![],
            model_name: "m".into(),
            stage: Stage::SelfCheck,
        };
        assert_eq!(mock.complete(&empty), Err(ProviderError::EmptyMessages));
        assert_eq!(
            mock.complete(&ChatRequest::single(Stage::Reflection, "m", "p")),
            Err(ProviderError::ScriptExhausted {
                stage: Stage::Reflection,
                call: 0
            })
        );
    }

    #[test]
    fn mock_respects_stage_and_matcher() {
        let mock = MockProvider::new(MockScript::new(vec![
            ScriptEntry::matching(Stage::SelfCheck, "beta", "UNSAFE"),
            ScriptEntry::new(Stage::Reflection, "r1"),
            ScriptEntry::new(Stage::SelfCheck, "SAFE"),
        ]));
        let ask = |stage, p: &str| mock.complete(&ChatRequest::single(stage, "m", p)).unwrap().text;
        assert_eq!(ask(Stage::SelfCheck, "alpha"), "SAFE");
        assert_eq!(ask(Stage::SelfCheck, "beta code"), "UNSAFE");
        assert_eq!(ask(Stage::Reflection, "anything"), "r1");
        assert_eq!(mock.remaining(), 0);
        let idx: Vec<_> = mock.calls().iter().map(|c| c.script_index).collect();
        assert_eq!(idx, [2, 0, 1]);
    }

    #[test]
    fn script_jsonl_round_trip() {
        let s = MockScript::new(vec![
            ScriptEntry::matching(Stage::SelfCheck, "x", "SAFE"),
            ScriptEntry::new(Stage::Reflection, "```\nfix\n```"),
        ]);
        assert_eq!(MockScript::parse(&s.to_jsonl()).unwrap(), s);
        assert!(MockScript::parse("{\"stage\":\"NOPE\",\"reply\":\"\"}").is_err());
    }

    #[test]
    fn reference_cost_arithmetic() {
        let t = usage_total(
            &[UsageEntry {
                stage: Stage::Reflection,
                usage: ChatUsage {
                    input_tokens: 30_000,
                    output_tokens: 14_762,
                    wall_ms: 0,
                },
            }],
            1.5e-3,
        );
        assert_eq!(t.total_tokens, 44_762);
        assert!((t.cost - 6.71e-2).abs() < 1e-4);
    }

    #[test]
    fn totals_are_additive() {
        let u = |n| ChatUsage {
            input_tokens: n,
            output_tokens: 0,
            wall_ms: 1,
        };
        let entries = [
            UsageEntry { stage: Stage::SelfCheck, usage: u(1000) },
            UsageEntry { stage: Stage::Reflection, usage: u(2000) },
        ];
        let t = usage_total(&entries, 1.0);
        assert_eq!(t.total_tokens, 3000);
        assert_eq!(t.calls, 2);
        assert_eq!(t.per_stage[&Stage::Reflection].total_tokens, 2000);
        assert_eq!(usage_total(&[], 1.5e-3), UsageTotals::default());
    }

    #[test]
    fn json_path_walks_arrays_and_objects() {
        let v = serde_json::json!({"choices": [{"message": {"content": "hi"}}]});
        assert_eq!(json_path(&v, "choices.0.message.content").unwrap(), "hi");
        assert!(json_path(&v, "choices.1").is_none());
    }
}
