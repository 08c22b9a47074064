//! Knowledge base and QA dataset loading.
//!
//! Both files are JSON-lines. A corpus line is
//! `{"doc_id": "...", "title": "...", "text": "..."}`; a dataset line is
//! `{"qid": "...", "question": "...", "gold_answers": [...], "gold_titles": [...], "task_kind": "extractive"|"yes_no"}`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record on line {line_no}: {reason}")]
    MalformedRecord { line_no: usize, reason: String },
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("duplicate qid {0:?}")]
    DuplicateQid(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// One knowledge-base entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("doc_id is empty".into());
        }
        if self.title.is_empty() {
            return Err("title is empty".into());
        }
        if self.text.is_empty() {
            return Err("text is empty".into());
        }
        Ok(())
    }
}

/// Normalized form of a title for identity comparisons.
pub fn title_key(title: &str) -> &str {
    title.trim()
}

/// Immutable document collection with lookup by id and by title.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    by_title: HashMap<String, Vec<usize>>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self, CorpusError> {
        if docs.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let mut by_id = HashMap::with_capacity(docs.len());
        let mut by_title: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, doc) in docs.iter().enumerate() {
            if let Err(reason) = doc.validate() {
                return Err(CorpusError::MalformedRecord { line_no: i + 1, reason });
            }
            if by_id.insert(doc.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
            }
            by_title.entry(title_key(&doc.title).to_string()).or_default().push(i);
        }
        Ok(Self { docs, by_id, by_title })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    /// Document at insertion position `idx` (the retrieval internal id).
    pub fn get(&self, idx: usize) -> Option<&Document> {
        self.docs.get(idx)
    }

    pub fn lookup(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    /// All documents carrying this title. Titles are not unique.
    pub fn lookup_title(&self, title: &str) -> Vec<&Document> {
        self.by_title
            .get(title_key(title))
            .map(|ids| ids.iter().map(|&i| &self.docs[i]).collect())
            .unwrap_or_default()
    }

    pub fn has_title(&self, title: &str) -> bool {
        self.by_title.contains_key(title_key(title))
    }

    /// SHA-256 over the documents in order, independent of file layout.
    pub fn checksum(&self) -> String {
        checksum_documents(&self.docs)
    }

    /// Serializes the corpus back to JSON-lines.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.docs {
            out.push_str(&serde_json::to_string(doc).expect("document serializes"));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn checksum_documents(docs: &[Document]) -> String {
    let mut hasher = Sha256::new();
    for doc in docs {
        for field in [&doc.doc_id, &doc.title, &doc.text] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-blank lines with 1-based line numbers.
fn records(content: &str) -> impl Iterator<Item = (usize, &str)> {
    content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_corpus(content: &str) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in records(content) {
        let doc: Document = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line_no,
            reason: e.to_string(),
        })?;
        doc.validate()
            .map_err(|reason| CorpusError::MalformedRecord { line_no, reason })?;
        if !seen.insert(doc.doc_id.clone()) {
            return Err(CorpusError::DuplicateDocId(doc.doc_id));
        }
        docs.push(doc);
    }
    Corpus::from_documents(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    parse_corpus(&read_file(path.as_ref())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Extractive,
    YesNo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub qid: String,
    pub question: String,
    pub gold_answers: Vec<String>,
    #[serde(default)]
    pub gold_titles: Vec<String>,
    pub task_kind: TaskKind,
}

impl QaExample {
    fn validate(&self) -> Result<(), String> {
        if self.qid.is_empty() {
            return Err("qid is empty".into());
        }
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.gold_answers.is_empty() {
            return Err("gold_answers must hold at least one answer".into());
        }
        if self.task_kind == TaskKind::YesNo {
            if let Some(bad) = self
                .gold_answers
                .iter()
                .find(|a| !matches!(a.trim().to_lowercase().as_str(), "yes" | "no"))
            {
                return Err(format!("yes_no example has non yes/no gold answer {bad:?}"));
            }
        }
        Ok(())
    }
}

pub fn parse_dataset(content: &str) -> Result<Vec<QaExample>, CorpusError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in records(content) {
        let ex: QaExample = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
            line_no,
            reason: e.to_string(),
        })?;
        ex.validate()
            .map_err(|reason| CorpusError::MalformedRecord { line_no, reason })?;
        if !seen.insert(ex.qid.clone()) {
            return Err(CorpusError::DuplicateQid(ex.qid));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<QaExample>, CorpusError> {
    parse_dataset(&read_file(path.as_ref())?)
}

/// Gold-title resolution summary for a dataset against a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadSummary {
    pub examples: usize,
    pub gold_titles: usize,
    pub unresolved_titles: usize,
    /// Unresolvable title → number of examples citing it.
    pub unresolved: BTreeMap<String, usize>,
}

pub fn summarize_gold_titles(examples: &[QaExample], corpus: &Corpus) -> LoadSummary {
    let mut summary = LoadSummary {
        examples: examples.len(),
        ..Default::default()
    };
    for ex in examples {
        for title in &ex.gold_titles {
            summary.gold_titles += 1;
            if !corpus.has_title(title) {
                summary.unresolved_titles += 1;
                *summary.unresolved.entry(title_key(title).to_string()).or_default() += 1;
            }
        }
    }
    summary
}
