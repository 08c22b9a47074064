//! Batch execution with bounded concurrency and resumable output.
//!
//! Workers pull questions from a shared counter. Finished records pass
//! through a reorder buffer so the file is written in dataset order, which
//! keeps output byte-identical whatever the concurrency.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::Serialize;
use thiserror::Error;

use super::config::{ConfigError, Deps, PipelineConfig};
use super::record::{parse_records, RecordStatus, RecordsError, RecordsHeader, RunRecord};
use super::runner::run_question;
use crate::corpus::QaExample;

#[derive(Debug, Error)]
pub enum BatchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} was written with config {found}, current config is {expected}")]
    FingerprintMismatch {
        path: String,
        expected: String,
        found: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub config_fingerprint: String,
    /// Questions considered after `limit`.
    pub total: usize,
    /// Already present in the output file.
    pub skipped: usize,
    pub processed: usize,
    pub ok: usize,
    pub failed: usize,
    /// Failures caused by an unreachable retrieval or LLM backend.
    pub backend_unavailable: usize,
}

impl BatchSummary {
    /// True when every processed question failed for lack of a backend.
    pub fn all_backend_unavailable(&self) -> bool {
        self.processed > 0 && self.backend_unavailable == self.processed
    }
}

fn io_err(path: &Path, source: std::io::Error) -> BatchError {
    BatchError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads an existing output file, dropping an interrupted final line.
/// Returns the qids already recorded.
fn prepare_output(path: &Path, header: &RecordsHeader) -> Result<HashSet<String>, BatchError> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(io_err(path, e)),
    };
    if content.trim().is_empty() {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let line = serde_json::to_string(header).expect("header serializes") + "\n";
        fs::write(path, line).map_err(|e| io_err(path, e))?;
        return Ok(HashSet::new());
    }
    let (found, records) = parse_records(&content, path)?;
    if found.config_fingerprint != header.config_fingerprint {
        return Err(BatchError::FingerprintMismatch {
            path: path.display().to_string(),
            expected: header.config_fingerprint.clone(),
            found: found.config_fingerprint,
        });
    }
    let keep = content.rfind('\n').map_or(0, |i| i + 1);
    if keep < content.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(|e| io_err(path, e))?;
        f.set_len(keep as u64).map_err(|e| io_err(path, e))?;
    }
    Ok(records.into_iter().map(|r| r.qid).collect())
}

/// Runs every question of `dataset` not yet in `out_path`, appending one
/// record per line.
pub fn run_batch(
    dataset: &[QaExample],
    config: &PipelineConfig,
    deps: Deps<'_>,
    out_path: impl AsRef<Path>,
) -> Result<BatchSummary, BatchError> {
    config.validate()?;
    let out_path = out_path.as_ref();
    let fingerprint = deps.fingerprint(config);
    let header = RecordsHeader {
        config_fingerprint: fingerprint.clone(),
        config: deps.header_config(config),
    };
    let done = prepare_output(out_path, &header)?;

    let limited = &dataset[..config.limit.unwrap_or(dataset.len()).min(dataset.len())];
    let todo: Vec<&QaExample> = limited.iter().filter(|e| !done.contains(&e.qid)).collect();
    let mut summary = BatchSummary {
        config_fingerprint: fingerprint.clone(),
        total: limited.len(),
        skipped: limited.len() - todo.len(),
        ..Default::default()
    };

    let mut file = OpenOptions::new()
        .append(true)
        .open(out_path)
        .map_err(|e| io_err(out_path, e))?;
    let next = AtomicUsize::new(0);
    let workers = config.concurrency_limit.min(todo.len()).max(1);
    let (tx, rx) = mpsc::channel::<(usize, RunRecord)>();

    std::thread::scope(|s| -> Result<(), BatchError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, todo, fingerprint) = (&next, &todo, &fingerprint);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(ex) = todo.get(i) else { break };
                let rec = run_question(ex, config, deps, fingerprint);
                if tx.send((i, rec)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut write_at = 0;
        for (i, rec) in rx {
            pending.insert(i, rec);
            while let Some(rec) = pending.remove(&write_at) {
                let line = serde_json::to_string(&rec).expect("record serializes") + "\n";
                file.write_all(line.as_bytes())
                    .and_then(|_| file.flush())
                    .map_err(|e| io_err(out_path, e))?;
                summary.processed += 1;
                match rec.status {
                    RecordStatus::Ok => summary.ok += 1,
                    RecordStatus::Failed => {
                        summary.failed += 1;
                        let unavailable = rec
                            .error
                            .as_ref()
                            .is_some_and(|e| matches!(e.kind.as_str(), "retriever_unavailable" | "llm_unavailable"));
                        summary.backend_unavailable += usize::from(unavailable);
                    }
                }
                write_at += 1;
            }
        }
        Ok(())
    })?;
    Ok(summary)
}
