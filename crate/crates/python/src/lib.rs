//! Python bindings: tokenizer, BM25 index, metrics, filter parsing and
//! batch run/eval entry points.

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use blendfilter::corpus::{load_corpus, load_dataset, Corpus, Document};
use blendfilter::eval::{self, EvalStage, ReportOptions};
use blendfilter::pipeline::{run_batch, PipelineConfig, Runtime};
use blendfilter::prompts::{DatasetFamily, PromptSet, Stage};
use blendfilter::retrieval::{self, Bm25Params, InvertedIndex, Retriever};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn to_py(py: Python<'_>, value: &impl serde::Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    retrieval::tokenize(text)
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    eval::normalize_answer(text)
}

#[pyfunction]
fn exact_match(pred: &str, golds: Vec<String>) -> f64 {
    eval::exact_match(pred, &golds)
}

#[pyfunction]
fn token_f1(pred: &str, golds: Vec<String>) -> f64 {
    eval::token_f1(pred, &golds)
}

/// Best-of-n `(em, f1)` over several sampled predictions.
#[pyfunction]
fn aggregate_best_of_n(preds: Vec<String>, golds: Vec<String>) -> (f64, f64) {
    let refs: Vec<&str> = preds.iter().map(String::as_str).collect();
    eval::aggregate_best_of_n(&refs, &golds)
}

/// `{"recall", "precision", "s_precision"}` for two title collections.
#[pyfunction]
fn retrieval_metrics(py: Python<'_>, retrieved: Vec<String>, gold: Vec<String>) -> PyResult<Py<PyAny>> {
    let r: BTreeSet<String> = retrieved.into_iter().collect();
    let g: BTreeSet<String> = gold.into_iter().collect();
    to_py(py, &eval::retrieval_metrics(&r, &g))
}

/// `(sorted kept ids, fallback_applied)`.
#[pyfunction]
fn parse_kept_ids(raw: &str, m: usize) -> PyResult<(Vec<usize>, bool)> {
    if m == 0 {
        return Err(value_err("m must be >= 1"));
    }
    let (ids, fallback) = blendfilter::filtering::parse_kept_ids(raw, m);
    Ok((ids.into_iter().collect(), fallback))
}

/// `"yes"`, `"no"` or `"unparsed"`.
#[pyfunction]
fn extract_yes_no(text: &str) -> &'static str {
    blendfilter::answer::extract_yes_no(text).as_str()
}

#[pyfunction]
fn concat_query(context: &str, question: &str) -> PyResult<String> {
    blendfilter::blending::concat_query(context, question).map_err(value_err)
}

/// Renders one of the packaged prompt templates, e.g.
/// `render_prompt("hotpotqa_like", "filter_extract", {...})`.
#[pyfunction]
fn render_prompt(family: &str, stage: &str, bindings: HashMap<String, String>) -> PyResult<String> {
    let family: DatasetFamily = family.parse().map_err(value_err)?;
    let stage = Stage::ALL
        .into_iter()
        .find(|s| s.file_name().trim_end_matches(".txt") == stage)
        .ok_or_else(|| value_err(format!("unknown stage {stage:?}")))?;
    let pairs: Vec<(&str, &str)> = bindings.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    PromptSet::builtin(family).render(stage, &pairs).map_err(value_err)
}

/// In-memory BM25 index over a corpus.
#[pyclass(name = "Index", module = "pyblendfilter", frozen)]
struct PyIndex {
    inner: InvertedIndex,
}

#[pymethods]
impl PyIndex {
    /// Builds from `(doc_id, title, text)` tuples.
    #[staticmethod]
    #[pyo3(signature = (docs, k1 = 1.2, b = 0.75))]
    fn from_documents(docs: Vec<(String, String, String)>, k1: f64, b: f64) -> PyResult<Self> {
        let docs = docs
            .into_iter()
            .map(|(id, title, text)| Document::new(id, title, text))
            .collect();
        let corpus = Corpus::from_documents(docs).map_err(value_err)?;
        Self::build(&corpus, k1, b)
    }

    /// Builds from a corpus JSONL file.
    #[staticmethod]
    #[pyo3(signature = (path, k1 = 1.2, b = 0.75))]
    fn from_corpus(path: PathBuf, k1: f64, b: f64) -> PyResult<Self> {
        Self::build(&load_corpus(path).map_err(io_err)?, k1, b)
    }

    /// Loads an index directory written by `save` or the CLI.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: InvertedIndex::load(dir, None).map_err(io_err)?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(dir).map_err(io_err)
    }

    /// Top-`k` documents as dicts with doc_id, title, text, score, rank.
    #[pyo3(signature = (query, k = 5))]
    fn search(&self, py: Python<'_>, query: &str, k: usize) -> PyResult<Py<PyAny>> {
        let set = self.inner.retrieve(query, k).map_err(value_err)?;
        let rows: Vec<_> = set
            .docs
            .iter()
            .map(|d| {
                serde_json::json!({
                    "doc_id": d.document.doc_id,
                    "title": d.document.title,
                    "text": d.document.text,
                    "score": d.score,
                    "rank": d.rank,
                })
            })
            .collect();
        to_py(py, &rows)
    }

    fn score(&self, query: &str, doc: usize) -> PyResult<f64> {
        self.inner.score(&retrieval::tokenize(query), doc).map_err(value_err)
    }

    #[getter]
    fn avg_doc_length(&self) -> f64 {
        self.inner.avg_doc_length()
    }

    fn __len__(&self) -> usize {
        self.inner.doc_count()
    }

    fn __repr__(&self) -> String {
        let p = self.inner.params();
        format!("Index(docs={}, k1={}, b={})", self.inner.doc_count(), p.k1, p.b)
    }
}

impl PyIndex {
    fn build(corpus: &Corpus, k1: f64, b: f64) -> PyResult<Self> {
        Ok(Self {
            inner: InvertedIndex::build(corpus, Bm25Params { k1, b }).map_err(value_err)?,
        })
    }
}

/// Runs a pipeline config file and returns the batch summary. `out`
/// overrides the config's output path.
#[pyfunction]
#[pyo3(signature = (config_path, out = None))]
fn run(py: Python<'_>, config_path: PathBuf, out: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let summary = py.detach(|| -> Result<_, String> {
        let mut config = PipelineConfig::load(&config_path).map_err(|e| e.to_string())?;
        if out.is_some() {
            config.out = out;
        }
        let dataset_path = config.dataset.clone().ok_or("config has no dataset")?;
        let out = config.out.clone().ok_or("no output path")?;
        let dataset = load_dataset(dataset_path).map_err(|e| e.to_string())?;
        let runtime = Runtime::from_config(&config).map_err(|e| e.to_string())?;
        run_batch(&dataset, &config, runtime.deps(), out).map_err(|e| e.to_string())
    });
    to_py(py, &summary.map_err(PyRuntimeError::new_err)?)
}

/// Metrics report for a records file as a dict.
#[pyfunction]
#[pyo3(signature = (records_path, dataset_path, stage = "pool", best_of_n = true))]
fn evaluate(
    py: Python<'_>,
    records_path: PathBuf,
    dataset_path: PathBuf,
    stage: &str,
    best_of_n: bool,
) -> PyResult<Py<PyAny>> {
    let stage: EvalStage = stage.parse().map_err(value_err)?;
    let report = eval::report(records_path, dataset_path, ReportOptions { stage, best_of_n }).map_err(value_err)?;
    to_py(py, &report)
}

#[pymodule]
fn pyblendfilter(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_best_of_n, m)?)?;
    m.add_function(wrap_pyfunction!(retrieval_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(parse_kept_ids, m)?)?;
    m.add_function(wrap_pyfunction!(extract_yes_no, m)?)?;
    m.add_function(wrap_pyfunction!(concat_query, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    let version = PyDict::new(m.py());
    version.set_item("records", blendfilter::pipeline::RECORD_FORMAT_VERSION)?;
    version.set_item("index", blendfilter::retrieval::INDEX_FORMAT_VERSION)?;
    m.add("FORMAT_VERSIONS", version)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
