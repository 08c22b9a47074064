//! LLM-based knowledge filtering and the union of filtered sets.
//!
//! Each retrieved set is judged on its own: the model sees only that set's
//! documents, numbered from 0. The kept ids of all sets are then merged into
//! one [`KnowledgePool`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::StageError;
use crate::knowledge::render_numbered;
use crate::llm::{Generator, LlmCall};
use crate::prompts::{FilterStrategy, PromptSet, Stage};
use crate::retrieval::{QueryKind, RetrievedSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub query_kind: QueryKind,
    /// Position `i` holds the doc_id shown to the model as knowledge `i`.
    pub input_docs: Vec<String>,
    pub kept_indices: BTreeSet<usize>,
    pub transcripts: Vec<LlmCall>,
    pub fallback_applied: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

impl FilterOutcome {
    /// Outcome keeping every document without consulting the model.
    pub fn keep_all(rset: &RetrievedSet) -> Self {
        Self {
            query_kind: rset.query_kind,
            input_docs: rset.docs.iter().map(|d| d.document.doc_id.clone()).collect(),
            kept_indices: (0..rset.len()).collect(),
            transcripts: Vec::new(),
            fallback_applied: false,
            topic: None,
        }
    }

    pub fn kept_doc_ids(&self) -> impl Iterator<Item = &str> {
        self.kept_indices.iter().map(|&i| self.input_docs[i].as_str())
    }

    pub fn check_invariants(&self, strategy: FilterStrategy) -> Result<(), String> {
        let m = self.input_docs.len();
        if let Some(bad) = self.kept_indices.iter().find(|&&i| i >= m) {
            return Err(format!("kept index {bad} outside 0..{m}"));
        }
        let expected = if m == 0 { 0 } else { strategy.stage_count() };
        if self.transcripts.len() != expected {
            return Err(format!("{} transcripts, expected {expected}", self.transcripts.len()));
        }
        Ok(())
    }
}

fn id_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)knowledge\s*(\d+)|\b(\d+)\b").expect("valid regex"))
}

fn is_none_response(lower: &str) -> bool {
    lower.contains("none") || lower.contains("no relevant")
}

/// Reads the kept knowledge ids from a filter response.
///
/// Returns the ids in `0..m` and whether the fail-open rule fired: when the
/// text holds no integer and does not say that nothing is relevant, every
/// id is kept.
pub fn parse_kept_ids(raw: &str, m: usize) -> (BTreeSet<usize>, bool) {
    let mut found_any = false;
    let mut kept = BTreeSet::new();
    for cap in id_pattern().captures_iter(raw) {
        found_any = true;
        let digits = cap.get(1).or_else(|| cap.get(2)).expect("one group matches").as_str();
        // values too large for usize are out of range by definition
        if let Ok(n) = digits.parse::<usize>() {
            if n < m {
                kept.insert(n);
            }
        }
    }
    if found_any || is_none_response(&raw.to_lowercase()) {
        (kept, false)
    } else {
        ((0..m).collect(), true)
    }
}

/// Topic text from the topic stage: trimmed, without a final period.
pub fn parse_topic(raw: &str) -> String {
    let t = raw.trim();
    t.strip_suffix('.').unwrap_or(t).trim_end().to_string()
}

fn render_optional(
    prompts: &PromptSet,
    stage: Stage,
    required: &[(&str, &str)],
    optional: &[(&str, &str)],
) -> Result<String, StageError> {
    let tpl = prompts.template(stage);
    let mut bindings = required.to_vec();
    bindings.extend(
        optional
            .iter()
            .filter(|(name, _)| tpl.is_some_and(|t| t.has_placeholder(name))),
    );
    Ok(prompts.render(stage, &bindings)?)
}

/// Filters one retrieved set. An empty set yields an empty outcome without
/// any model call.
pub fn filter_set(
    q: &str,
    rset: &RetrievedSet,
    gen: Generator<'_>,
    prompts: &PromptSet,
    doc_char_budget: usize,
) -> Result<FilterOutcome, StageError> {
    let mut outcome = FilterOutcome {
        query_kind: rset.query_kind,
        input_docs: rset.docs.iter().map(|d| d.document.doc_id.clone()).collect(),
        kept_indices: BTreeSet::new(),
        transcripts: Vec::new(),
        fallback_applied: false,
        topic: None,
    };
    let m = rset.len();
    if m == 0 {
        return Ok(outcome);
    }
    let knowledge_list = render_numbered(rset.documents(), doc_char_budget);
    let max_id = (m - 1).to_string();

    let mut topic = String::new();
    if prompts.filter_strategy() == FilterStrategy::TwoStageTopic {
        let call = gen.call(prompts.render(Stage::FilterTopic, &[("question", q)])?)?;
        topic = parse_topic(&call.response);
        outcome.topic = Some(topic.clone());
        outcome.transcripts.push(call);
    }
    let discuss = render_optional(
        prompts,
        Stage::FilterDiscuss,
        &[("question", q), ("knowledge_list", &knowledge_list)],
        &[("max_id", &max_id), ("topic", &topic)],
    )?;
    let discussion = gen.call(discuss)?;
    let extract = render_optional(
        prompts,
        Stage::FilterExtract,
        &[
            ("question", q),
            ("knowledge_list", &knowledge_list),
            ("context", discussion.response.trim()),
        ],
        &[("max_id", &max_id)],
    )?;
    outcome.transcripts.push(discussion);
    let ids = gen.call(extract)?;
    let (kept, fallback) = parse_kept_ids(&ids.response, m);
    outcome.transcripts.push(ids);
    outcome.kept_indices = kept;
    outcome.fallback_applied = fallback;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub document: Document,
    pub provenance: BTreeSet<QueryKind>,
}

/// Deduplicated union of kept documents with the query kinds that
/// contributed each one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KnowledgePool {
    pub entries: Vec<PoolEntry>,
}

impl KnowledgePool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.entries.iter().map(|e| &e.document)
    }

    pub fn doc_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.document.doc_id.as_str()).collect()
    }

    pub fn titles(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.document.title.as_str()).collect()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.entries.iter().any(|e| e.document.doc_id == doc_id)
    }
}

fn check_alignment(outcome: &FilterOutcome, rset: &RetrievedSet) -> Result<(), StageError> {
    if outcome.query_kind != rset.query_kind {
        return Err(StageError::MisalignedInputs(format!(
            "outcome for {} paired with set for {}",
            outcome.query_kind.as_str(),
            rset.query_kind.as_str()
        )));
    }
    let ids = rset.docs.iter().map(|d| d.document.doc_id.as_str());
    if !ids.eq(outcome.input_docs.iter().map(String::as_str)) {
        return Err(StageError::MisalignedInputs(format!(
            "{} outcome lists different documents than its set",
            rset.query_kind.as_str()
        )));
    }
    if let Some(bad) = outcome.kept_indices.iter().find(|&&i| i >= rset.len()) {
        return Err(StageError::MisalignedInputs(format!("kept index {bad} out of range")));
    }
    Ok(())
}

/// Union of the kept documents. Documents are ordered by the first query
/// kind (original, external, internal) that kept them, then by rank.
pub fn union_filtered(outcomes: &[FilterOutcome], rsets: &[RetrievedSet]) -> Result<KnowledgePool, StageError> {
    if outcomes.len() != rsets.len() {
        return Err(StageError::MisalignedInputs(format!(
            "{} outcomes for {} retrieved sets",
            outcomes.len(),
            rsets.len()
        )));
    }
    let mut pairs: Vec<(&FilterOutcome, &RetrievedSet)> = outcomes.iter().zip(rsets).collect();
    for (o, r) in &pairs {
        check_alignment(o, r)?;
    }
    pairs.sort_by_key(|(o, _)| o.query_kind);
    if pairs.windows(2).any(|w| w[0].0.query_kind == w[1].0.query_kind) {
        return Err(StageError::MisalignedInputs("duplicate query kind".into()));
    }

    let mut pool = KnowledgePool::default();
    let mut position: BTreeMap<String, usize> = BTreeMap::new();
    for (outcome, rset) in pairs {
        for &i in &outcome.kept_indices {
            let doc = &rset.docs[i].document;
            match position.get(&doc.doc_id) {
                Some(&at) => {
                    pool.entries[at].provenance.insert(outcome.query_kind);
                }
                None => {
                    position.insert(doc.doc_id.clone(), pool.entries.len());
                    pool.entries.push(PoolEntry {
                        document: doc.clone(),
                        provenance: BTreeSet::from([outcome.query_kind]),
                    });
                }
            }
        }
    }
    Ok(pool)
}

/// Union of whole retrieved sets, as if every document were kept.
pub fn union_direct(rsets: &[RetrievedSet]) -> Result<KnowledgePool, StageError> {
    let outcomes: Vec<FilterOutcome> = rsets.iter().map(FilterOutcome::keep_all).collect();
    union_filtered(&outcomes, rsets)
}
