//! Query generation blending.
//!
//! Three query variants are built for one question `q`:
//!
//! * the original question,
//! * the externally augmented query `a_ex ‖ q`, where `a_ex` is a
//!   chain-of-thought generated over documents retrieved with the current
//!   query (iterated `hops` times),
//! * the internally augmented query `a_in ‖ q`, where `a_in` is a passage
//!   the model writes from its own memory.
//!
//! `‖` places the generated context first, then [`CONCAT_DELIMITER`], then
//! the question.

use serde::{Deserialize, Serialize};

use crate::error::StageError;
use crate::knowledge::render_knowledge;
use crate::llm::{Generator, LlmCall};
use crate::prompts::{PromptSet, Stage};
use crate::retrieval::{QueryKind, RetrievedSet, Retriever};

pub const CONCAT_DELIMITER: &str = "\n";

pub fn concat_query(context: &str, q: &str) -> Result<String, StageError> {
    if q.trim().is_empty() {
        return Err(StageError::EmptyQuestion);
    }
    let context = context.trim_end();
    if context.is_empty() {
        return Ok(q.to_string());
    }
    Ok(format!("{context}{CONCAT_DELIMITER}{q}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBundle {
    pub original: String,
    pub external_aug: Option<String>,
    pub internal_aug: Option<String>,
    pub external_context: Option<String>,
    pub internal_context: Option<String>,
    pub hops: usize,
}

impl QueryBundle {
    pub fn check_invariants(&self) -> Result<(), String> {
        for (name, aug, ctx) in [
            ("external", &self.external_aug, &self.external_context),
            ("internal", &self.internal_aug, &self.internal_context),
        ] {
            match (aug, ctx) {
                (Some(aug), Some(ctx)) => {
                    let expected = concat_query(ctx, &self.original).map_err(|e| e.to_string())?;
                    if *aug != expected {
                        return Err(format!("{name} query is not context ‖ question"));
                    }
                }
                (None, None) => {}
                _ => return Err(format!("{name} query and context must be present together")),
            }
        }
        Ok(())
    }
}

/// One retrieve → generate step of external augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationHop {
    pub query: String,
    pub retrieved: RetrievedSet,
    pub call: LlmCall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalAugmentation {
    pub query: String,
    pub context: String,
    pub hops: Vec<AugmentationHop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InternalAugmentation {
    pub query: String,
    pub context: String,
    pub call: LlmCall,
}

pub fn external_augment(
    q: &str,
    retriever: &dyn Retriever,
    gen: Generator<'_>,
    prompts: &PromptSet,
    k: usize,
    hops: usize,
    doc_char_budget: usize,
) -> Result<ExternalAugmentation, StageError> {
    if q.trim().is_empty() {
        return Err(StageError::EmptyQuestion);
    }
    if hops == 0 || k == 0 {
        return Err(StageError::InvalidArgument("hops and k must be at least 1".into()));
    }
    let mut query = q.to_string();
    let mut context = String::new();
    let mut trace = Vec::with_capacity(hops);
    for _ in 0..hops {
        let retrieved = retriever.retrieve(&query, k)?.with_kind(QueryKind::ExternalAug);
        let knowledge = render_knowledge(retrieved.documents(), doc_char_budget);
        let prompt = prompts.render(Stage::ExternalAugment, &[("knowledge", &knowledge), ("question", q)])?;
        let call = gen.call(prompt)?;
        context = call.response.clone();
        let next = concat_query(&context, q)?;
        trace.push(AugmentationHop {
            query: std::mem::replace(&mut query, next),
            retrieved,
            call,
        });
    }
    Ok(ExternalAugmentation {
        query,
        context,
        hops: trace,
    })
}

pub fn internal_augment(q: &str, gen: Generator<'_>, prompts: &PromptSet) -> Result<InternalAugmentation, StageError> {
    if q.trim().is_empty() {
        return Err(StageError::EmptyQuestion);
    }
    let prompt = prompts.render(Stage::InternalAugment, &[("question", q)])?;
    let call = gen.call(prompt)?;
    Ok(InternalAugmentation {
        query: concat_query(&call.response, q)?,
        context: call.response.clone(),
        call,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlendOptions {
    pub external: bool,
    pub internal: bool,
    pub hops: usize,
    pub k: usize,
    pub doc_char_budget: usize,
}

/// Intermediate state of [`build_bundle`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BlendTrace {
    pub external_hops: Vec<AugmentationHop>,
    pub internal_call: Option<LlmCall>,
}

impl BlendTrace {
    pub fn llm_calls(&self) -> usize {
        self.external_hops.len() + usize::from(self.internal_call.is_some())
    }

    pub fn retrievals(&self) -> usize {
        self.external_hops.len()
    }
}

/// Builds the query bundle. Disabled variants issue no calls and stay
/// absent from the bundle.
pub fn build_bundle(
    q: &str,
    opts: BlendOptions,
    retriever: &dyn Retriever,
    gen: Generator<'_>,
    prompts: &PromptSet,
) -> Result<(QueryBundle, BlendTrace), StageError> {
    if q.trim().is_empty() {
        return Err(StageError::EmptyQuestion);
    }
    let mut bundle = QueryBundle {
        original: q.to_string(),
        external_aug: None,
        internal_aug: None,
        external_context: None,
        internal_context: None,
        hops: opts.hops,
    };
    let mut trace = BlendTrace::default();
    if opts.external {
        let ext = external_augment(q, retriever, gen, prompts, opts.k, opts.hops, opts.doc_char_budget)?;
        bundle.external_aug = Some(ext.query);
        bundle.external_context = Some(ext.context);
        trace.external_hops = ext.hops;
    }
    if opts.internal {
        let int = internal_augment(q, gen, prompts)?;
        bundle.internal_aug = Some(int.query);
        bundle.internal_context = Some(int.context);
        trace.internal_call = Some(int.call);
    }
    Ok((bundle, trace))
}
