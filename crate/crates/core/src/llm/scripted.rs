//! Deterministic scripted backend for tests and offline runs.
//!
//! Rules are tried in registration order; the first rule whose matcher
//! accepts the prompt and still has uses left answers it. A script file is
//! JSON: `{"rules": [{"match": "regex"|"exact", "pattern": "...", "reply": "...", "times": null}]}`.

use std::path::Path;
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{FinishReason, LlmBackend, LlmError, LlmRequest, LlmResponse};
use crate::util::sha256_hex;

#[derive(Debug, Clone)]
pub enum Matcher {
    Exact(String),
    Regex(Regex),
}

impl Matcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Exact(p) => p == prompt,
            Matcher::Regex(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MatchKind {
    Exact,
    Regex,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleSpec {
    #[serde(rename = "match")]
    kind: MatchKind,
    pattern: String,
    reply: String,
    #[serde(default)]
    times: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScriptFile {
    rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub reply: String,
    /// Remaining uses; `None` is unlimited.
    pub times: Option<usize>,
}

impl ScriptRule {
    pub fn exact(prompt: impl Into<String>, reply: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Exact(prompt.into()),
            reply: reply.into(),
            times: None,
        }
    }

    pub fn regex(pattern: &str, reply: impl Into<String>) -> Result<Self, LlmError> {
        let re = Regex::new(pattern).map_err(|e| LlmError::InvalidScript(format!("{pattern:?}: {e}")))?;
        Ok(Self {
            matcher: Matcher::Regex(re),
            reply: reply.into(),
            times: None,
        })
    }

    pub fn times(mut self, n: usize) -> Self {
        self.times = Some(n);
        self
    }

    fn spec(&self) -> RuleSpec {
        let (kind, pattern) = match &self.matcher {
            Matcher::Exact(p) => (MatchKind::Exact, p.clone()),
            Matcher::Regex(re) => (MatchKind::Regex, re.as_str().to_string()),
        };
        RuleSpec {
            kind,
            pattern,
            reply: self.reply.clone(),
            times: self.times,
        }
    }
}

#[derive(Default)]
struct State {
    rules: Vec<ScriptRule>,
    log: Vec<LlmRequest>,
}

#[derive(Default)]
pub struct ScriptedBackend {
    state: Mutex<State>,
    digest: String,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        let specs: Vec<RuleSpec> = rules.iter().map(ScriptRule::spec).collect();
        let digest = sha256_hex(serde_json::to_vec(&specs).expect("rules serialize"));
        Self {
            state: Mutex::new(State { rules, log: Vec::new() }),
            digest,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, LlmError> {
        let file: ScriptFile = serde_json::from_str(json).map_err(|e| LlmError::InvalidScript(e.to_string()))?;
        let rules = file
            .rules
            .into_iter()
            .map(|spec| {
                let rule = match spec.kind {
                    MatchKind::Exact => ScriptRule::exact(spec.pattern, spec.reply),
                    MatchKind::Regex => ScriptRule::regex(&spec.pattern, spec.reply)?,
                };
                Ok(ScriptRule {
                    times: spec.times,
                    ..rule
                })
            })
            .collect::<Result<Vec<_>, LlmError>>()?;
        Ok(Self::new(rules))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| LlmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&raw)
    }

    /// Backend answering each recorded prompt with its recorded response.
    /// Each pair answers once, so repeated prompts replay in order.
    pub fn from_transcripts<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self::new(
            pairs
                .into_iter()
                .map(|(p, r)| ScriptRule::exact(p, r).times(1))
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        let state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let file = ScriptFile {
            rules: state.rules.iter().map(ScriptRule::spec).collect(),
        };
        serde_json::to_string_pretty(&file).expect("script serializes")
    }

    /// Every request received, in arrival order.
    pub fn call_log(&self) -> Vec<LlmRequest> {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).log.len()
    }

    pub fn clear_log(&self) {
        self.state.lock().unwrap_or_else(|e| e.into_inner()).log.clear();
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let mut state = self.state.lock().unwrap_or_else(|e| e.into_inner());
        state.log.push(request.clone());
        let rule = state
            .rules
            .iter_mut()
            .find(|r| r.times != Some(0) && r.matcher.matches(&request.prompt));
        match rule {
            Some(rule) => {
                if let Some(n) = rule.times.as_mut() {
                    *n -= 1;
                }
                Ok(LlmResponse {
                    text: rule.reply.clone(),
                    finish_reason: FinishReason::Stop,
                    cached: false,
                })
            }
            None => Err(LlmError::ScriptExhausted(request.prompt.chars().take(80).collect())),
        }
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "scripted", "script_sha256": self.digest })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> LlmRequest {
        LlmRequest {
            model: "m".into(),
            prompt: prompt.into(),
            max_tokens: 16,
            temperature: 0.0,
            top_p: 0.0,
            stop: vec![],
        }
    }

    #[test]
    fn regex_rule_answers() {
        let b = ScriptedBackend::new(vec![
            ScriptRule::regex("So the answer is", "x. So the answer is yes.").unwrap()
        ]);
        let r = b.complete(&req("... So the answer is no.\nQuestion: ?")).unwrap();
        assert_eq!(r.text, "x. So the answer is yes.");
        assert!(!r.cached);
        assert_eq!(b.call_count(), 1);
    }

    #[test]
    fn empty_script_exhausted() {
        let b = ScriptedBackend::new(vec![]);
        assert!(matches!(b.complete(&req("hi")), Err(LlmError::ScriptExhausted(_))));
    }

    #[test]
    fn limited_rules_consumed_in_order() {
        let b = ScriptedBackend::new(vec![
            ScriptRule::exact("p", "first").times(1),
            ScriptRule::regex("^p$", "second").unwrap(),
        ]);
        assert_eq!(b.complete(&req("p")).unwrap().text, "first");
        assert_eq!(b.complete(&req("p")).unwrap().text, "second");
        assert_eq!(b.complete(&req("p")).unwrap().text, "second");
    }

    #[test]
    fn json_round_trip() {
        let json = r#"{"rules":[{"match":"exact","pattern":"a","reply":"b"},{"match":"regex","pattern":"(?s).*","reply":"c","times":2}]}"#;
        let b = ScriptedBackend::from_json(json).unwrap();
        let again = ScriptedBackend::from_json(&b.to_json()).unwrap();
        assert_eq!(b.describe(), again.describe());
        assert_eq!(again.complete(&req("a")).unwrap().text, "b");
        assert_eq!(again.complete(&req("zz")).unwrap().text, "c");
        assert!(ScriptedBackend::from_json(r#"{"rules":[{"match":"regex","pattern":"(","reply":""}]}"#).is_err());
    }
}
