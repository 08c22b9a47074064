//! Run configuration: one JSON document, overridable from the command line.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::blending::CONCAT_DELIMITER;
use crate::corpus::load_corpus;
use crate::knowledge::DEFAULT_DOC_CHAR_BUDGET;
use crate::llm::{CachedBackend, HttpBackend, HttpBackendConfig, LlmBackend, SamplingParams, ScriptedBackend};
use crate::prompts::{DatasetFamily, PromptSet};
use crate::retrieval::{InvertedIndex, RemoteRetriever, Retriever, DEFAULT_K};
use crate::util::{sha256_hex, RetryPolicy};

/// Bumped whenever the record layout changes meaning.
pub const RECORD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("cannot set up {what}: {reason}")]
    Setup { what: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Direct,
    DirectRetrieval,
    Cot,
    CotRetrieval,
    Retgen,
    #[default]
    Blendfilter,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Direct,
        Method::DirectRetrieval,
        Method::Cot,
        Method::CotRetrieval,
        Method::Retgen,
        Method::Blendfilter,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Direct => "direct",
            Method::DirectRetrieval => "direct_retrieval",
            Method::Cot => "cot",
            Method::CotRetrieval => "cot_retrieval",
            Method::Retgen => "retgen",
            Method::Blendfilter => "blendfilter",
        }
    }

    pub fn uses_retrieval(&self) -> bool {
        !matches!(self, Method::Direct | Method::Cot)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoQ,
    NoQEx,
    NoQIn,
    NoFilter,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::NoQ => "no_q",
            Ablation::NoQEx => "no_q_ex",
            Ablation::NoQIn => "no_q_in",
            Ablation::NoFilter => "no_filter",
        }
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Ablation::NoQ, Ablation::NoQEx, Ablation::NoQIn, Ablation::NoFilter]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation {s:?}"))
    }
}

fn default_inflight() -> usize {
    8
}

fn default_remote_timeout() -> u64 {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RetrieverSpec {
    /// A saved index directory. `corpus`, when given, is checked against
    /// the index checksum.
    Bm25 {
        index: PathBuf,
        #[serde(default)]
        corpus: Option<PathBuf>,
    },
    Remote {
        url: String,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default = "default_inflight")]
        max_inflight: usize,
        #[serde(default = "default_remote_timeout")]
        timeout_secs: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmSpec {
    Http {
        #[serde(flatten)]
        config: HttpBackendConfig,
    },
    Scripted {
        script: PathBuf,
    },
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_hops() -> usize {
    1
}

fn default_sampling() -> Vec<f64> {
    vec![0.0]
}

fn default_budget() -> usize {
    DEFAULT_DOC_CHAR_BUDGET
}

fn default_concurrency() -> usize {
    1
}

fn default_family() -> DatasetFamily {
    DatasetFamily::HotpotqaLike
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_hops")]
    pub hops: usize,
    #[serde(default)]
    pub ablations: BTreeSet<Ablation>,
    #[serde(default = "default_family")]
    pub dataset_family: DatasetFamily,
    #[serde(default)]
    pub retriever: Option<RetrieverSpec>,
    #[serde(default)]
    pub llm: Option<LlmSpec>,
    /// Decoding parameters for every call; answer calls override `top_p`
    /// with each value of `sampling`.
    #[serde(default)]
    pub generation: SamplingParams,
    #[serde(default = "default_sampling")]
    pub sampling: Vec<f64>,
    #[serde(default = "default_budget")]
    pub per_doc_char_budget: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub prompts_dir: Option<PathBuf>,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub limit: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl PipelineConfig {
    pub fn from_json(raw: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(raw).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&raw)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.retriever {
            Some(RetrieverSpec::Bm25 { index, corpus }) => {
                fix(index);
                if let Some(c) = corpus {
                    fix(c);
                }
            }
            Some(RetrieverSpec::Remote { .. }) | None => {}
        }
        if let Some(LlmSpec::Scripted { script }) = &mut self.llm {
            fix(script);
        }
        for p in [
            &mut self.cache_dir,
            &mut self.prompts_dir,
            &mut self.dataset,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if self.sampling.is_empty() {
            return bad("sampling needs at least one top_p value");
        }
        if self.sampling.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("sampling values must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.generation.top_p) {
            return bad("generation.top_p must lie in [0, 1]");
        }
        if self.generation.max_tokens == 0 {
            return bad("generation.max_tokens must be at least 1");
        }
        if self.per_doc_char_budget == 0 {
            return bad("per_doc_char_budget must be at least 1");
        }
        if self.concurrency_limit == 0 {
            return bad("concurrency_limit must be at least 1");
        }
        if !self.ablations.is_empty() && self.method != Method::Blendfilter {
            return bad("ablations apply only to method blendfilter");
        }
        if [Ablation::NoQ, Ablation::NoQEx, Ablation::NoQIn]
            .iter()
            .all(|a| self.ablations.contains(a))
        {
            return bad("ablations remove every query variant");
        }
        Ok(())
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    /// The fields that change results. Paths, cache location and
    /// concurrency are left out.
    pub fn semantic_json(&self) -> Value {
        json!({
            "method": self.method,
            "k": self.k,
            "hops": self.hops,
            "ablations": self.ablations,
            "dataset_family": self.dataset_family,
            "generation": self.generation,
            "sampling": self.sampling,
            "per_doc_char_budget": self.per_doc_char_budget,
            "concat_delimiter": CONCAT_DELIMITER,
            "record_format": RECORD_FORMAT_VERSION,
        })
    }
}

/// Borrowed handles a run needs.
#[derive(Clone, Copy)]
pub struct Deps<'a> {
    pub retriever: &'a dyn Retriever,
    pub llm: &'a dyn LlmBackend,
    pub prompts: &'a PromptSet,
}

impl Deps<'_> {
    /// Header object written at the top of a records file: the semantic
    /// config plus descriptions of the backends and prompts in use.
    pub fn header_config(&self, config: &PipelineConfig) -> Value {
        let mut v = config.semantic_json();
        v["retriever"] = self.retriever.describe();
        v["llm"] = self.llm.describe();
        v["prompts_sha256"] = Value::String(self.prompts.digest());
        v
    }

    pub fn fingerprint(&self, config: &PipelineConfig) -> String {
        sha256_hex(serde_json::to_vec(&self.header_config(config)).expect("config serializes"))
    }
}

/// Owned backends built from a config.
pub struct Runtime {
    pub retriever: Box<dyn Retriever>,
    pub llm: Box<dyn LlmBackend>,
    pub prompts: PromptSet,
}

impl Runtime {
    pub fn from_config(config: &PipelineConfig) -> Result<Self, ConfigError> {
        let retriever: Box<dyn Retriever> = match &config.retriever {
            None => {
                if config.method.uses_retrieval() {
                    return Err(ConfigError::Invalid(format!(
                        "method {} needs a retriever",
                        config.method
                    )));
                }
                Box::new(NoRetriever)
            }
            Some(RetrieverSpec::Bm25 { index, corpus }) => {
                let corpus = corpus
                    .as_ref()
                    .map(load_corpus)
                    .transpose()
                    .map_err(|e| ConfigError::Setup {
                        what: "corpus",
                        reason: e.to_string(),
                    })?;
                Box::new(
                    InvertedIndex::load(index, corpus.as_ref()).map_err(|e| ConfigError::Setup {
                        what: "index",
                        reason: e.to_string(),
                    })?,
                )
            }
            Some(RetrieverSpec::Remote {
                url,
                retry,
                max_inflight,
                timeout_secs,
            }) => Box::new(RemoteRetriever::new(
                url.clone(),
                *retry,
                *max_inflight,
                Duration::from_secs(*timeout_secs),
            )),
        };
        let base: Box<dyn LlmBackend> = match &config.llm {
            None => return Err(ConfigError::Invalid("no LLM backend configured".into())),
            Some(LlmSpec::Http { config: http }) => Box::new(HttpBackend::from_env(http.clone())),
            Some(LlmSpec::Scripted { script }) => {
                Box::new(ScriptedBackend::load(script).map_err(|e| ConfigError::Setup {
                    what: "llm",
                    reason: e.to_string(),
                })?)
            }
        };
        let llm: Box<dyn LlmBackend> = match &config.cache_dir {
            Some(dir) => Box::new(CachedBackend::new(base, dir.clone())),
            None => base,
        };
        let prompts = match &config.prompts_dir {
            Some(dir) => PromptSet::load(dir, config.dataset_family).map_err(|e| ConfigError::Setup {
                what: "prompts",
                reason: e.to_string(),
            })?,
            None => PromptSet::builtin(config.dataset_family),
        };
        Ok(Self {
            retriever,
            llm,
            prompts,
        })
    }

    pub fn deps(&self) -> Deps<'_> {
        Deps {
            retriever: self.retriever.as_ref(),
            llm: self.llm.as_ref(),
            prompts: &self.prompts,
        }
    }
}

/// Stand-in for methods that never retrieve.
struct NoRetriever;

impl Retriever for NoRetriever {
    fn retrieve(&self, _: &str, _: usize) -> Result<crate::retrieval::RetrievedSet, crate::retrieval::RetrievalError> {
        Err(crate::retrieval::RetrievalError::BackendUnavailable(
            "no retriever configured".into(),
        ))
    }

    fn describe(&self) -> Value {
        json!({ "kind": "none" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = PipelineConfig::default();
        assert_eq!(c.method, Method::Blendfilter);
        assert_eq!((c.k, c.hops), (5, 1));
        assert_eq!(c.sampling, vec![0.0]);
        assert_eq!(c.per_doc_char_budget, 1200);
        c.validate().unwrap();
    }

    #[test]
    fn parses_full_config() {
        let c = PipelineConfig::from_json(
            r#"{"method":"retgen","k":3,"hops":2,"dataset_family":"strategyqa_like",
                "retriever":{"kind":"bm25","index":"idx"},
                "llm":{"kind":"http","base_url":"http://h/v1","style":"chat"},
                "sampling":[0,0.5,1]}"#,
        )
        .unwrap();
        assert_eq!(c.method, Method::Retgen);
        assert!(matches!(c.llm, Some(LlmSpec::Http { ref config }) if config.base_url == "http://h/v1"));
        c.validate().unwrap();
        assert!(PipelineConfig::from_json(r#"{"metod":"x"}"#).is_err());
    }

    #[test]
    fn validation() {
        let mut c = PipelineConfig {
            method: Method::Cot,
            ..Default::default()
        };
        c.ablations.insert(Ablation::NoQ);
        assert!(c.validate().is_err());
        c.method = Method::Blendfilter;
        c.validate().unwrap();
        c.ablations.extend([Ablation::NoQEx, Ablation::NoQIn]);
        assert!(c.validate().is_err());
        let c = PipelineConfig {
            sampling: vec![1.5],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn semantic_json_ignores_operational_fields() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            concurrency_limit: 8,
            cache_dir: Some("c".into()),
            out: Some("o".into()),
            ..Default::default()
        };
        assert_eq!(a.semantic_json(), b.semantic_json());
        let c = PipelineConfig {
            k: 3,
            ..Default::default()
        };
        assert_ne!(a.semantic_json(), c.semantic_json());
    }

    #[test]
    fn relative_paths_resolve() {
        let mut c = PipelineConfig::from_json(
            r#"{"retriever":{"kind":"bm25","index":"idx"},"llm":{"kind":"scripted","script":"/abs.json"}}"#,
        )
        .unwrap();
        c.resolve_paths(Path::new("/base"));
        assert!(matches!(c.retriever, Some(RetrieverSpec::Bm25 { ref index, .. }) if index == Path::new("/base/idx")));
        assert!(matches!(c.llm, Some(LlmSpec::Scripted { ref script }) if script == Path::new("/abs.json")));
    }
}
