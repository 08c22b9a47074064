//! Uniform access to the language model: templates, an OpenAI-compatible
//! HTTP client, a scripted mock and a content-addressed response cache.

mod cache;
mod http;
mod scripted;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, cached_complete, CachedBackend, CanonicalRequest};
pub use http::{ApiStyle, HttpBackend, HttpBackendConfig, API_KEY_ENV};
pub use scripted::{Matcher, ScriptRule, ScriptedBackend};
pub use template::{PromptTemplate, TemplateError};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("LLM backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("LLM authentication failed: {0}")]
    AuthFailure(String),
    #[error("LLM backend rejected request: {0}")]
    Rejected(String),
    #[error("malformed LLM response: {0}")]
    MalformedResponse(String),
    #[error("scripted backend has no rule for prompt starting {0:?}")]
    ScriptExhausted(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache entry {0} is corrupt")]
    CacheCorrupt(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(LlmError::InvalidRequest("top_p must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn parse(raw: Option<&str>) -> Self {
        match raw {
            Some("stop") | Some("eos") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub cached: bool,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;

    /// Stable description of the backend for config fingerprints.
    fn describe(&self) -> serde_json::Value;
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        (**self).complete(request)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

/// Decoding parameters shared by every call of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub model: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo-instruct".into(),
            max_tokens: 512,
            temperature: 0.0,
            top_p: 0.0,
            stop: Vec::new(),
        }
    }
}

/// One prompt/response exchange as stored in run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCall {
    pub prompt: String,
    pub response: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub cached: bool,
}

/// A backend bound to fixed sampling parameters.
#[derive(Clone, Copy)]
pub struct Generator<'a> {
    backend: &'a dyn LlmBackend,
    params: &'a SamplingParams,
    top_p: f64,
}

impl<'a> Generator<'a> {
    pub fn new(backend: &'a dyn LlmBackend, params: &'a SamplingParams) -> Self {
        Self {
            backend,
            params,
            top_p: params.top_p,
        }
    }

    /// Same backend and parameters with a different nucleus threshold.
    pub fn with_top_p(self, top_p: f64) -> Self {
        Self { top_p, ..self }
    }

    pub fn temperature(&self) -> f64 {
        self.params.temperature
    }

    pub fn top_p(&self) -> f64 {
        self.top_p
    }

    pub fn request(&self, prompt: String) -> LlmRequest {
        LlmRequest {
            model: self.params.model.clone(),
            prompt,
            max_tokens: self.params.max_tokens,
            temperature: self.params.temperature,
            top_p: self.top_p,
            stop: self.params.stop.clone(),
        }
    }

    pub fn call(&self, prompt: String) -> Result<LlmCall, LlmError> {
        let request = self.request(prompt);
        request.validate()?;
        let resp = self.backend.complete(&request)?;
        Ok(LlmCall {
            prompt: request.prompt,
            response: resp.text,
            finish_reason: resp.finish_reason,
            cached: resp.cached,
        })
    }
}
