//! Binary SAFE/UNSAFE front-end check used to route a sample.

use serde::{Deserialize, Serialize};

use crate::prompt::PromptEngine;
use crate::provider::{ChatRequest, MeteredProvider, ProviderError, Stage};
use crate::sample::CodeSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub raw_response: String,
    pub parse_clean: bool,
}

impl Verdict {
    /// Parses a reply. Only a reply that normalizes to exactly `safe` is SAFE;
    /// anything unrecognized is UNSAFE with `parse_clean == false`.
    pub fn parse(raw: &str) -> Self {
        let normalized = normalize(raw);
        let (label, parse_clean) = match normalized.as_str() {
            "safe" => (Label::Safe, true),
            "unsafe" => (Label::Unsafe, true),
            _ => (Label::Unsafe, false),
        };
        Self {
            label,
            raw_response: raw.to_string(),
            parse_clean,
        }
    }

    pub fn is_safe(&self) -> bool {
        self.label == Label::Safe
    }
}

/// Trim, lowercase, drop punctuation, collapse whitespace.
fn normalize(raw: &str) -> String {
    raw.to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders the self-check prompt and issues exactly one provider call.
pub fn check(
    sample: &CodeSample,
    prompts: &PromptEngine,
    model_name: &str,
    provider: &MeteredProvider<'_>,
) -> Result<Verdict, ProviderError> {
    let prompt = prompts.render_self_check(sample);
    let reply = provider.complete(&ChatRequest::single(Stage::SelfCheck, model_name, prompt))?;
    Ok(Verdict::parse(&reply.text))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::clock::{Clock, TickClock};
    use crate::provider::{MockProvider, MockScript, ScriptEntry, UsageLedger};
    use crate::sample::Language;

    #[test]
    fn parse_cases() {
        assert_eq!(
            Verdict::parse("SAFE"),
            Verdict { label: Label::Safe, raw_response: "SAFE".into(), parse_clean: true }
        );
        let v = Verdict::parse("  unsafe.\n");
        assert_eq!((v.label, v.parse_clean), (Label::Unsafe, true));
        let v = Verdict::parse("looks fine to me");
        assert_eq!((v.label, v.parse_clean), (Label::Unsafe, false));
        let v = Verdict::parse("SAFE? no, UNSAFE");
        assert_eq!((v.label, v.parse_clean), (Label::Unsafe, false));
        let v = Verdict::parse("**Safe**");
        assert_eq!((v.label, v.parse_clean), (Label::Safe, true));
        let v = Verdict::parse("");
        assert_eq!((v.label, v.parse_clean), (Label::Unsafe, false));
    }

    #[test]
    fn one_call_per_check() {
        let mock = MockProvider::new(MockScript::new(vec![
            ScriptEntry::new(Stage::SelfCheck, "SAFE"),
            ScriptEntry::new(Stage::SelfCheck, "UNSAFE"),
        ]));
        let ledger = UsageLedger::new();
        let clock: Arc<dyn Clock> = Arc::new(TickClock::new(0, 1));
        let metered = MeteredProvider { inner: &mock, ledger: &ledger, clock: &clock };
        let s = CodeSample::new("s", Language::C, "int main(){return 0;}");
        let v = check(&s, &PromptEngine::default(), "m", &metered).unwrap();
        assert!(v.is_safe());
        assert_eq!(mock.calls().len(), 1);
        assert_eq!(ledger.entries().len(), 1);
    }
}
