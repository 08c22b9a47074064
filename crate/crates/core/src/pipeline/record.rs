//! Per-question run records and the `records.jsonl` file format.
//!
//! The file starts with a header line `{"config_fingerprint", "config"}`,
//! followed by one [`RunRecord`] per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::config::Method;
use crate::answer::AnswerRecord;
use crate::blending::{BlendTrace, QueryBundle};
use crate::corpus::{QaExample, TaskKind};
use crate::filtering::{union_direct, FilterOutcome, KnowledgePool};
use crate::llm::LlmCall;
use crate::retrieval::RetrievedSet;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} has no header line")]
    MissingHeader { path: String },
    #[error("{path} line {line_no}: {reason}")]
    Malformed {
        path: String,
        line_no: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordError {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarningKind {
    EmptyQuery,
    FilterFallback,
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub kind: WarningKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub qid: String,
    pub question: String,
    pub task_kind: TaskKind,
    pub method: Method,
    pub config_fingerprint: String,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RecordError>,
    pub concat_delimiter: String,
    #[serde(default)]
    pub bundle: Option<QueryBundle>,
    #[serde(default)]
    pub augmentation: BlendTrace,
    #[serde(default)]
    pub retrieved: Vec<RetrievedSet>,
    #[serde(default)]
    pub filters: Vec<FilterOutcome>,
    #[serde(default)]
    pub pool: KnowledgePool,
    #[serde(default)]
    pub answers: Vec<AnswerRecord>,
    #[serde(default)]
    pub prediction: Option<String>,
    /// Calls that reached the retrieval backend.
    pub retrieval_calls: usize,
    pub llm_calls: usize,
    #[serde(default)]
    pub warnings: Vec<Warning>,
    /// Wall-clock milliseconds per stage. The only nondeterministic field.
    #[serde(default)]
    pub timings_ms: BTreeMap<String, u64>,
}

impl RunRecord {
    pub fn new(ex: &QaExample, method: Method, fingerprint: &str, delimiter: &str) -> Self {
        Self {
            qid: ex.qid.clone(),
            question: ex.question.clone(),
            task_kind: ex.task_kind,
            method,
            config_fingerprint: fingerprint.to_string(),
            status: RecordStatus::Ok,
            error: None,
            concat_delimiter: delimiter.to_string(),
            bundle: None,
            augmentation: BlendTrace::default(),
            retrieved: Vec::new(),
            filters: Vec::new(),
            pool: KnowledgePool::default(),
            answers: Vec::new(),
            prediction: None,
            retrieval_calls: 0,
            llm_calls: 0,
            warnings: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    /// Every model exchange in the order it was issued.
    pub fn llm_transcripts(&self) -> Vec<&LlmCall> {
        let mut out: Vec<&LlmCall> = self.augmentation.external_hops.iter().map(|h| &h.call).collect();
        out.extend(self.augmentation.internal_call.as_ref());
        out.extend(self.filters.iter().flat_map(|f| &f.transcripts));
        out.extend(self.answers.iter().flat_map(|a| &a.transcripts));
        out
    }

    /// Copy with timings cleared, for comparisons across runs.
    pub fn without_timings(&self) -> Self {
        Self {
            timings_ms: BTreeMap::new(),
            ..self.clone()
        }
    }

    /// Checks the subset and pool laws.
    pub fn check_invariants(&self) -> Result<(), String> {
        for f in &self.filters {
            let rset = self
                .retrieved
                .iter()
                .find(|r| r.query_kind == f.query_kind)
                .ok_or_else(|| format!("filter for {} without a retrieved set", f.query_kind.as_str()))?;
            let available: BTreeSet<&str> = rset.docs.iter().map(|d| d.document.doc_id.as_str()).collect();
            if let Some(bad) = f.kept_doc_ids().find(|id| !available.contains(id)) {
                return Err(format!("filter kept {bad} which was not retrieved"));
            }
        }
        let direct = union_direct(&self.retrieved).map_err(|e| e.to_string())?;
        if let Some(bad) = self.pool.doc_ids().into_iter().find(|id| !direct.contains(id)) {
            return Err(format!("pool holds {bad} outside the direct union"));
        }
        if let Some(b) = &self.bundle {
            b.check_invariants()?;
        }
        if self.llm_calls != self.llm_transcripts().len() {
            return Err("llm_calls disagrees with transcripts".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordsHeader {
    pub config_fingerprint: String,
    pub config: Value,
}

fn io_err(path: &Path, source: std::io::Error) -> RecordsError {
    RecordsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses records file content. A final line without a newline is treated
/// as an interrupted write and ignored.
pub fn parse_records(content: &str, path: &Path) -> Result<(RecordsHeader, Vec<RunRecord>), RecordsError> {
    let complete = match content.rfind('\n') {
        Some(i) => &content[..=i],
        None => "",
    };
    let mut lines = complete.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let malformed = |line_no: usize, e: serde_json::Error| RecordsError::Malformed {
        path: path.display().to_string(),
        line_no,
        reason: e.to_string(),
    };
    let (i, first) = lines.next().ok_or_else(|| RecordsError::MissingHeader {
        path: path.display().to_string(),
    })?;
    let header: RecordsHeader = serde_json::from_str(first).map_err(|e| malformed(i + 1, e))?;
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(i + 1, e)))
        .collect::<Result<Vec<RunRecord>, _>>()?;
    Ok((header, records))
}

pub fn read_records(path: impl AsRef<Path>) -> Result<(RecordsHeader, Vec<RunRecord>), RecordsError> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_records(&content, path)
}
