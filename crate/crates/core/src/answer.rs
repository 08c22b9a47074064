//! Answer generation: a reasoning (or direct) call over the knowledge pool
//! followed by a short-answer extraction call.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, TaskKind};
use crate::error::StageError;
use crate::knowledge::render_knowledge;
use crate::llm::{Generator, LlmCall};
use crate::prompts::{PromptSet, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerStyle {
    /// Few-shot exemplars with step-by-step rationales.
    Cot,
    /// The same exemplars answered without rationale.
    Direct,
}

impl AnswerStyle {
    fn stage(self) -> Stage {
        match self {
            AnswerStyle::Cot => Stage::AnswerCot,
            AnswerStyle::Direct => Stage::AnswerDirect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YesNo {
    Yes,
    No,
    Unparsed,
}

impl YesNo {
    pub fn as_str(&self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
            YesNo::Unparsed => "unparsed",
        }
    }
}

/// A leading "yes"/"no" token wins, otherwise the first such token
/// anywhere in the text.
pub fn extract_yes_no(text: &str) -> YesNo {
    let lower = text.trim().to_lowercase();
    lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .find_map(|t| match t {
            "yes" => Some(YesNo::Yes),
            "no" => Some(YesNo::No),
            _ => None,
        })
        .unwrap_or(YesNo::Unparsed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub cot_text: String,
    pub extracted_answer: String,
    pub temperature: f64,
    pub top_p: f64,
    pub transcripts: Vec<LlmCall>,
}

pub fn generate_answer<'d>(
    q: &str,
    knowledge: impl IntoIterator<Item = &'d Document>,
    style: AnswerStyle,
    task: TaskKind,
    gen: Generator<'_>,
    prompts: &PromptSet,
    doc_char_budget: usize,
) -> Result<AnswerRecord, StageError> {
    let block = render_knowledge(knowledge, doc_char_budget);
    let first = gen.call(prompts.render(style.stage(), &[("knowledge", &block), ("question", q)])?)?;
    let context = first.response.trim().to_string();
    let second = gen.call(prompts.render(Stage::AnswerExtract, &[("context", &context), ("question", q)])?)?;
    let extracted_answer = match task {
        TaskKind::Extractive => second.response.trim().to_string(),
        TaskKind::YesNo => extract_yes_no(&second.response).as_str().to_string(),
    };
    Ok(AnswerRecord {
        cot_text: first.response.clone(),
        extracted_answer,
        temperature: gen.temperature(),
        top_p: gen.top_p(),
        transcripts: vec![first, second],
    })
}

/// Chain-of-thought answer over `knowledge` plus extraction.
pub fn generate_cot_answer<'d>(
    q: &str,
    knowledge: impl IntoIterator<Item = &'d Document>,
    task: TaskKind,
    gen: Generator<'_>,
    prompts: &PromptSet,
    doc_char_budget: usize,
) -> Result<AnswerRecord, StageError> {
    generate_answer(q, knowledge, AnswerStyle::Cot, task, gen, prompts, doc_char_budget)
}

/// One answer per nucleus threshold, in the given order.
#[allow(clippy::too_many_arguments)]
pub fn sample_answers(
    q: &str,
    knowledge: &[Document],
    style: AnswerStyle,
    task: TaskKind,
    gen: Generator<'_>,
    prompts: &PromptSet,
    doc_char_budget: usize,
    top_p_list: &[f64],
) -> Result<Vec<AnswerRecord>, StageError> {
    if top_p_list.is_empty() {
        return Err(StageError::InvalidArgument("top_p list is empty".into()));
    }
    top_p_list
        .iter()
        .map(|&p| generate_answer(q, knowledge, style, task, gen.with_top_p(p), prompts, doc_char_budget))
        .collect()
}
