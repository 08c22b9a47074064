//! End-to-end orchestration: configuration, per-question runs, run records
//! and batch execution.

mod batch;
mod config;
mod record;
mod runner;

pub use batch::{run_batch, BatchError, BatchSummary};
pub use config::{
    Ablation, ConfigError, Deps, LlmSpec, Method, PipelineConfig, RetrieverSpec, Runtime, RECORD_FORMAT_VERSION,
};
pub use record::{
    parse_records, read_records, RecordError, RecordStatus, RecordsError, RecordsHeader, RunRecord, Warning,
    WarningKind,
};
pub use runner::{run_baseline, run_blendfilter, run_question};
