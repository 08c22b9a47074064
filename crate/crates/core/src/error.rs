use thiserror::Error;

use crate::llm::{LlmError, TemplateError};
use crate::retrieval::RetrievalError;

/// Failure inside one pipeline stage for one question.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("misaligned inputs: {0}")]
    MisalignedInputs(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl StageError {
    /// Short machine-readable class used in run records.
    pub fn kind(&self) -> &'static str {
        match self {
            StageError::Retrieval(RetrievalError::BackendUnavailable(_)) => "retriever_unavailable",
            StageError::Retrieval(_) => "retrieval",
            StageError::Llm(LlmError::BackendUnavailable(_)) => "llm_unavailable",
            StageError::Llm(LlmError::AuthFailure(_)) => "llm_auth",
            StageError::Llm(_) => "llm",
            StageError::Template(_) => "template",
            StageError::EmptyQuestion => "empty_question",
            StageError::MisalignedInputs(_) => "misaligned_inputs",
            StageError::InvalidArgument(_) => "invalid_argument",
        }
    }

    pub fn is_backend_unavailable(&self) -> bool {
        matches!(self.kind(), "retriever_unavailable" | "llm_unavailable")
    }
}
