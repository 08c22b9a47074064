//! Answer and retrieval metrics over run records.
//!
//! Answers are compared after SQuAD-style normalization. Every aggregate is
//! a macro average: per-question values first, then the mean.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{load_dataset, title_key, CorpusError, QaExample, TaskKind};
use crate::filtering::{union_direct, union_filtered, KnowledgePool};
use crate::pipeline::{read_records, RecordStatus, RecordsError, RunRecord};
use crate::retrieval::QueryKind;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Dataset(#[from] CorpusError),
    #[error("record qid {0:?} is not in the dataset")]
    UnknownQid(String),
    #[error("no records to evaluate")]
    EmptyRecords,
    #[error("invalid stage {0:?}")]
    InvalidStage(String),
}

fn punct() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}[[:punct:]]]").expect("valid regex"))
}

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"))
}

/// Lowercase, strip punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct = punct().replace_all(&lower, "");
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred: &str, gold: &str) -> f64 {
    let p = normalize_answer(pred);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pt.len() as f64;
    let recall = overlap as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Bag-of-tokens F1 against the best-matching gold answer.
pub fn token_f1(pred: &str, golds: &[String]) -> f64 {
    golds.iter().map(|g| f1_single(pred, g)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalScores {
    pub recall: f64,
    pub precision: f64,
    pub s_precision: f64,
}

pub fn retrieval_metrics<S: AsRef<str> + Ord>(retrieved: &BTreeSet<S>, gold: &BTreeSet<S>) -> RetrievalScores {
    let r: BTreeSet<&str> = retrieved.iter().map(|s| s.as_ref()).collect();
    let g: BTreeSet<&str> = gold.iter().map(|s| s.as_ref()).collect();
    let hit = r.intersection(&g).count() as f64;
    RetrievalScores {
        recall: if g.is_empty() { 0.0 } else { hit / g.len() as f64 },
        precision: if r.is_empty() { 0.0 } else { hit / r.len() as f64 },
        s_precision: if !g.is_empty() && r == g { 1.0 } else { 0.0 },
    }
}

/// Best-of-n: the maximum EM and maximum F1 over the sampled answers.
pub fn aggregate_best_of_n(preds: &[&str], golds: &[String]) -> (f64, f64) {
    preds.iter().fold((0.0, 0.0), |(em, f1), p| {
        (f64::max(em, exact_match(p, golds)), f64::max(f1, token_f1(p, golds)))
    })
}

/// Which document set of a record the retrieval metrics look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalStage {
    /// The knowledge pool handed to answer generation.
    #[default]
    Pool,
    /// Union of all retrieved sets, unfiltered.
    DirectUnion,
    Retrieved(QueryKind),
    Filtered(QueryKind),
}

impl std::str::FromStr for EvalStage {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::InvalidStage(s.to_string());
        match s {
            "pool" => Ok(EvalStage::Pool),
            "direct_union" => Ok(EvalStage::DirectUnion),
            _ => {
                let (head, kind) = s.split_once(':').ok_or_else(bad)?;
                let kind: QueryKind = kind.parse().map_err(|_| bad())?;
                match head {
                    "retrieved" => Ok(EvalStage::Retrieved(kind)),
                    "filtered" => Ok(EvalStage::Filtered(kind)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

impl std::fmt::Display for EvalStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalStage::Pool => f.write_str("pool"),
            EvalStage::DirectUnion => f.write_str("direct_union"),
            EvalStage::Retrieved(k) => write!(f, "retrieved:{}", k.as_str()),
            EvalStage::Filtered(k) => write!(f, "filtered:{}", k.as_str()),
        }
    }
}

/// Titles in the selected stage, or `None` when the record lacks it.
pub fn stage_titles(record: &RunRecord, stage: EvalStage) -> Option<BTreeSet<String>> {
    let from_pool = |pool: &KnowledgePool| pool.titles().into_iter().map(|t| title_key(t).to_string()).collect();
    match stage {
        EvalStage::Pool => Some(from_pool(&record.pool)),
        EvalStage::DirectUnion => union_direct(&record.retrieved).ok().map(|p| from_pool(&p)),
        EvalStage::Retrieved(kind) => record
            .retrieved
            .iter()
            .find(|r| r.query_kind == kind)
            .map(|r| r.titles().into_iter().map(|t| title_key(t).to_string()).collect()),
        EvalStage::Filtered(kind) => {
            let outcome = record.filters.iter().find(|o| o.query_kind == kind)?;
            let rset = record.retrieved.iter().find(|r| r.query_kind == kind)?;
            union_filtered(std::slice::from_ref(outcome), std::slice::from_ref(rset))
                .ok()
                .map(|p| from_pool(&p))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    pub stage: EvalStage,
    /// Score the best of all sampled answers instead of the first one.
    pub best_of_n: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            stage: EvalStage::Pool,
            best_of_n: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub qid: String,
    pub status: RecordStatus,
    pub prediction: Option<String>,
    pub em: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalScores>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub normalization: String,
    pub averaging: String,
    pub stage: String,
    pub best_of_n: bool,
    pub n: usize,
    pub failed: usize,
    pub em: f64,
    pub f1: f64,
    pub accuracy: Option<f64>,
    pub recall: f64,
    pub precision: f64,
    pub s_precision: f64,
    /// Questions with gold titles, over which the retrieval metrics average.
    pub n_retrieval: usize,
    pub n_without_gold_titles: usize,
    pub fallback_rate: f64,
    pub per_question: Vec<QuestionRow>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn score_record(record: &RunRecord, example: &QaExample, opts: ReportOptions) -> QuestionRow {
    let preds: Vec<&str> = match record.status {
        RecordStatus::Ok => record.answers.iter().map(|a| a.extracted_answer.as_str()).collect(),
        RecordStatus::Failed => Vec::new(),
    };
    let preds = if opts.best_of_n {
        &preds[..]
    } else {
        &preds[..preds.len().min(1)]
    };
    let (em, f1) = aggregate_best_of_n(preds, &example.gold_answers);
    let accuracy = (example.task_kind == TaskKind::YesNo).then_some(em);
    let retrieval = if example.gold_titles.is_empty() {
        None
    } else {
        let gold: BTreeSet<String> = example.gold_titles.iter().map(|t| title_key(t).to_string()).collect();
        let got = stage_titles(record, opts.stage).unwrap_or_default();
        Some(retrieval_metrics(&got, &gold))
    };
    QuestionRow {
        qid: record.qid.clone(),
        status: record.status,
        prediction: record.prediction.clone(),
        em,
        f1,
        accuracy,
        retrieval,
        fallback: record.filters.iter().any(|o| o.fallback_applied),
    }
}

pub fn evaluate(records: &[RunRecord], dataset: &[QaExample], opts: ReportOptions) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyRecords);
    }
    let by_qid: HashMap<&str, &QaExample> = dataset.iter().map(|e| (e.qid.as_str(), e)).collect();
    let rows = records
        .iter()
        .map(|r| {
            let ex = by_qid
                .get(r.qid.as_str())
                .ok_or_else(|| EvalError::UnknownQid(r.qid.clone()))?;
            Ok(score_record(r, ex, opts))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let scored: Vec<&RetrievalScores> = rows.iter().filter_map(|r| r.retrieval.as_ref()).collect();
    Ok(MetricsReport {
        normalization: "squad: lowercase, strip punctuation, drop articles a/an/the, collapse whitespace".into(),
        averaging: "macro over questions".into(),
        stage: opts.stage.to_string(),
        best_of_n: opts.best_of_n,
        n: rows.len(),
        failed: rows.iter().filter(|r| r.status == RecordStatus::Failed).count(),
        em: mean(rows.iter().map(|r| r.em)).unwrap_or(0.0),
        f1: mean(rows.iter().map(|r| r.f1)).unwrap_or(0.0),
        accuracy: mean(rows.iter().filter_map(|r| r.accuracy)),
        recall: mean(scored.iter().map(|s| s.recall)).unwrap_or(0.0),
        precision: mean(scored.iter().map(|s| s.precision)).unwrap_or(0.0),
        s_precision: mean(scored.iter().map(|s| s.s_precision)).unwrap_or(0.0),
        n_retrieval: scored.len(),
        n_without_gold_titles: rows.len() - scored.len(),
        fallback_rate: mean(rows.iter().map(|r| if r.fallback { 1.0 } else { 0.0 })).unwrap_or(0.0),
        per_question: rows,
    })
}

pub fn report(
    records_path: impl AsRef<Path>,
    dataset_path: impl AsRef<Path>,
    opts: ReportOptions,
) -> Result<MetricsReport, EvalError> {
    let (_, records) = read_records(records_path)?;
    let dataset = load_dataset(dataset_path)?;
    evaluate(&records, &dataset, opts)
}

impl MetricsReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "normalization: {}", self.normalization);
        let _ = writeln!(out, "averaging:     {}", self.averaging);
        let _ = writeln!(out, "stage:         {}  best_of_n: {}", self.stage, self.best_of_n);
        let _ = writeln!(out, "questions:     {}  failed: {}", self.n, self.failed);
        let _ = writeln!(out, "{:<14}{:>8}", "metric", "value");
        let mut row = |name: &str, v: f64| {
            let _ = writeln!(out, "{name:<14}{v:>8.4}");
        };
        row("em", self.em);
        row("f1", self.f1);
        if let Some(acc) = self.accuracy {
            row("accuracy", acc);
        }
        row("recall", self.recall);
        row("precision", self.precision);
        row("s_precision", self.s_precision);
        row("fallback_rate", self.fallback_rate);
        let _ = writeln!(
            out,
            "retrieval metrics over {} questions ({} without gold titles)",
            self.n_retrieval, self.n_without_gold_titles
        );
        out
    }
}
