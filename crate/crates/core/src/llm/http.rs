//! OpenAI-compatible completion client.
//!
//! `POST {base_url}/completions` with `{"model","prompt","max_tokens","temperature","top_p","stop"}`;
//! the chat style posts the prompt as a single user message to
//! `{base_url}/chat/completions`. Transient failures (transport errors,
//! 429, 5xx) are retried with exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FinishReason, LlmBackend, LlmError, LlmRequest, LlmResponse};
use crate::util::{RetryPolicy, Semaphore, TokenBucket};

pub const API_KEY_ENV: &str = "BLENDFILTER_LLM_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiStyle {
    #[default]
    Completions,
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    #[serde(default)]
    pub style: ApiStyle,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_inflight")]
    pub max_inflight: usize,
    /// Requests per second; `None` disables rate limiting.
    #[serde(default)]
    pub requests_per_second: Option<f64>,
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_inflight() -> usize {
    8
}

impl HttpBackendConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            style: ApiStyle::default(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout_secs(),
            max_inflight: default_inflight(),
            requests_per_second: None,
        }
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    inflight: Semaphore,
    bucket: Option<TokenBucket>,
}

enum Attempt {
    Transient(String),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .new_agent();
        let bucket = config
            .requests_per_second
            .filter(|r| *r > 0.0)
            .map(|r| TokenBucket::new(r, r.ceil()));
        Self {
            inflight: Semaphore::new(config.max_inflight),
            api_key: api_key.filter(|k| !k.is_empty()),
            config,
            agent,
            bucket,
        }
    }

    /// Reads the API key from `BLENDFILTER_LLM_API_KEY`.
    pub fn from_env(config: HttpBackendConfig) -> Self {
        Self::new(config, std::env::var(API_KEY_ENV).ok())
    }

    fn url(&self) -> String {
        let base = self.config.base_url.trim_end_matches('/');
        match self.config.style {
            ApiStyle::Completions => format!("{base}/completions"),
            ApiStyle::Chat => format!("{base}/chat/completions"),
        }
    }

    fn body(&self, req: &LlmRequest) -> Value {
        let stop = if req.stop.is_empty() {
            Value::Null
        } else {
            json!(req.stop)
        };
        match self.config.style {
            ApiStyle::Completions => json!({
                "model": req.model,
                "prompt": req.prompt,
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
                "top_p": req.top_p,
                "stop": stop,
            }),
            ApiStyle::Chat => json!({
                "model": req.model,
                "messages": [{"role": "user", "content": req.prompt}],
                "max_tokens": req.max_tokens,
                "temperature": req.temperature,
                "top_p": req.top_p,
                "stop": stop,
            }),
        }
    }

    fn parse(&self, body: &Value) -> Result<LlmResponse, LlmError> {
        let choice = body
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| LlmError::MalformedResponse("missing choices[0]".into()))?;
        let text = match self.config.style {
            ApiStyle::Completions => choice.get("text"),
            ApiStyle::Chat => choice.get("message").and_then(|m| m.get("content")),
        }
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedResponse("missing completion text".into()))?;
        Ok(LlmResponse {
            text: text.to_string(),
            finish_reason: FinishReason::parse(choice.get("finish_reason").and_then(Value::as_str)),
            cached: false,
        })
    }

    fn attempt(&self, req: &LlmRequest) -> Result<LlmResponse, Attempt> {
        if let Some(bucket) = &self.bucket {
            bucket.take();
        }
        let mut call = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = call
            .send_json(self.body(req))
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => {
                let body: Value = serde_json::from_str(&text)
                    .map_err(|e| Attempt::Fatal(LlmError::MalformedResponse(e.to_string())))?;
                self.parse(&body).map_err(Attempt::Fatal)
            }
            401 | 403 => Err(Attempt::Fatal(LlmError::AuthFailure(format!("HTTP {status}")))),
            408 | 429 | 500..=599 => Err(Attempt::Transient(format!("HTTP {status}"))),
            _ => Err(Attempt::Fatal(LlmError::Rejected(format!("HTTP {status}: {text}")))),
        }
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let _permit = self.inflight.acquire();
        let retry = self.config.retry;
        let mut last = String::new();
        for attempt in 0..=retry.max_retries {
            if attempt > 0 {
                std::thread::sleep(retry.delay(attempt - 1));
            }
            match self.attempt(request) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => last = msg,
            }
        }
        Err(LlmError::BackendUnavailable(format!(
            "{} after {} retries: {last}",
            self.url(),
            retry.max_retries
        )))
    }

    fn describe(&self) -> Value {
        json!({ "kind": "http", "base_url": self.config.base_url, "style": self.config.style })
    }
}
