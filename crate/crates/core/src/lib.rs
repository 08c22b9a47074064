//! Retrieval-augmented question answering with blended query generation
//! and LLM-based knowledge filtering.
//!
//! A question is expanded into up to three queries (the original, one
//! augmented with reasoning over retrieved documents, one augmented with a
//! passage the model writes from memory). Each query retrieves top-k
//! documents from a BM25 index or a remote retriever, the model prunes each
//! set, and the answer is generated over the union of what survives.

pub mod answer;
pub mod blending;
pub mod cli;
pub mod convert;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod filtering;
pub mod knowledge;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod util;

pub use corpus::{Corpus, Document, QaExample, TaskKind};
pub use error::StageError;
