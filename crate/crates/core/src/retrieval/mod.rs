//! The retriever: a native BM25 index and a remote HTTP adapter, both
//! returning ranked top-k documents.

mod bm25;
mod remote;
mod tokenize;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;

pub use bm25::{Bm25Params, IndexManifest, InvertedIndex, Posting, INDEX_FORMAT_VERSION};
pub use remote::RemoteRetriever;
pub use tokenize::tokenize;

/// Default retrieval depth.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown document {0}")]
    UnknownDoc(usize),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid BM25 parameters: {0}")]
    InvalidParams(String),
    #[error("retrieval backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed retriever response: {0}")]
    MalformedResponse(String),
    #[error("stale index: manifest checksum {expected}, corpus checksum {found}")]
    StaleIndex { expected: String, found: String },
    #[error("index format error: {0}")]
    IndexFormat(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which query variant produced a retrieved set.
///
/// The declaration order is the precedence used when merging sets into a
/// knowledge pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Original,
    ExternalAug,
    InternalAug,
    Baseline,
}

impl QueryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            QueryKind::Original => "original",
            QueryKind::ExternalAug => "external_aug",
            QueryKind::InternalAug => "internal_aug",
            QueryKind::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" | "q" => Ok(QueryKind::Original),
            "external_aug" | "q_ex" => Ok(QueryKind::ExternalAug),
            "internal_aug" | "q_in" => Ok(QueryKind::InternalAug),
            "baseline" => Ok(QueryKind::Baseline),
            other => Err(format!("unknown query kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub document: Document,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSet {
    pub query_kind: QueryKind,
    pub query_text: String,
    pub docs: Vec<RetrievedDoc>,
    /// Set when the query tokenized to nothing and retrieval was skipped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty_query: bool,
}

impl RetrievedSet {
    pub fn new(query_kind: QueryKind, query_text: impl Into<String>, docs: Vec<RetrievedDoc>) -> Self {
        Self {
            query_kind,
            query_text: query_text.into(),
            docs,
            empty_query: false,
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn with_kind(mut self, kind: QueryKind) -> Self {
        self.query_kind = kind;
        self
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.docs.iter().map(|d| &d.document)
    }

    pub fn titles(&self) -> Vec<&str> {
        self.docs.iter().map(|d| d.document.title.as_str()).collect()
    }

    /// Checks rank numbering, score ordering, uniqueness and the k bound.
    pub fn check_invariants(&self, k: usize) -> Result<(), String> {
        if self.docs.len() > k {
            return Err(format!("{} docs exceed k={k}", self.docs.len()));
        }
        let mut seen = HashSet::new();
        for (i, d) in self.docs.iter().enumerate() {
            if d.rank != i {
                return Err(format!("rank {} at position {i}", d.rank));
            }
            if !seen.insert(d.document.doc_id.as_str()) {
                return Err(format!("duplicate doc_id {:?}", d.document.doc_id));
            }
            if i > 0 && d.score > self.docs[i - 1].score {
                return Err(format!("score increases at rank {i}"));
            }
        }
        Ok(())
    }
}

/// A retriever `R(q, K; k)`.
pub trait Retriever: Send + Sync {
    /// Returns the top-`k` documents for `query_text`. The returned set has
    /// kind [`QueryKind::Baseline`]; callers relabel it.
    fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError>;

    /// Stable description of the backend for config fingerprints.
    fn describe(&self) -> serde_json::Value;
}

impl<R: Retriever + ?Sized> Retriever for std::sync::Arc<R> {
    fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        (**self).retrieve(query_text, k)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

impl<R: Retriever + ?Sized> Retriever for Box<R> {
    fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        (**self).retrieve(query_text, k)
    }

    fn describe(&self) -> serde_json::Value {
        (**self).describe()
    }
}

/// Per-question wrapper that issues each distinct `(query, k)` to the
/// backend once and counts backend calls.
pub struct MemoRetriever<'a> {
    inner: &'a dyn Retriever,
    memo: Mutex<HashMap<(String, usize), RetrievedSet>>,
    calls: AtomicUsize,
}

impl<'a> MemoRetriever<'a> {
    pub fn new(inner: &'a dyn Retriever) -> Self {
        Self {
            inner,
            memo: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of calls that reached the underlying backend.
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Retriever for MemoRetriever<'_> {
    fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        let key = (query_text.to_string(), k);
        if let Some(hit) = self.memo.lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let set = self.inner.retrieve(query_text, k)?;
        self.memo
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, set.clone());
        Ok(set)
    }

    fn describe(&self) -> serde_json::Value {
        self.inner.describe()
    }
}
