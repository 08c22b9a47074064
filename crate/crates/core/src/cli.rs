//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 IO or configuration error,
//! 3 every question failed because a backend was unreachable.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::convert::{convert, SourceFormat};
use crate::corpus::{load_corpus, load_dataset, summarize_gold_titles, Corpus};
use crate::eval::{evaluate, report, EvalStage, MetricsReport, ReportOptions};
use crate::llm::{ApiStyle, HttpBackendConfig};
use crate::pipeline::{read_records, run_batch, Ablation, LlmSpec, Method, PipelineConfig, RetrieverSpec, Runtime};
use crate::prompts::DatasetFamily;
use crate::retrieval::{Bm25Params, InvertedIndex, QueryKind};
use crate::util::RetryPolicy;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "blendfilter",
    version,
    about = "Retrieval-augmented QA with query blending and knowledge filtering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Manage BM25 indexes.
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Run a method over a dataset and write records.jsonl.
    Run(Box<RunArgs>),
    /// Answer and retrieval metrics for a records file.
    Eval(EvalArgs),
    /// Retrieval metrics for every document set stored in the records.
    RetrievalEval(RetrievalEvalArgs),
    /// Convert a public dataset dump into dataset JSONL.
    ConvertDataset(ConvertArgs),
}

#[derive(Debug, Subcommand)]
enum IndexAction {
    /// Build an index directory from a corpus JSONL file.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_parser = parse_family)]
    family: Option<DatasetFamily>,
    #[arg(long, conflicts_with = "retriever_url")]
    index: Option<PathBuf>,
    /// Corpus checked against the index checksum.
    #[arg(long, requires = "index")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    retriever_url: Option<String>,
    #[arg(long, conflicts_with = "llm_script")]
    llm_url: Option<String>,
    /// Use the chat completions endpoint of --llm-url.
    #[arg(long, requires = "llm_url")]
    chat: bool,
    /// Scripted backend rules file (offline runs).
    #[arg(long)]
    llm_script: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long, num_args = 1.., value_parser = parse_ablation)]
    ablate: Vec<Ablation>,
    #[arg(long = "top-p", num_args = 1..)]
    top_p: Vec<f64>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// pool, direct_union, retrieved:<kind> or filtered:<kind>
    #[arg(long, default_value = "pool")]
    stage: String,
    /// Score only the first sampled answer instead of the best one.
    #[arg(long)]
    first_sample: bool,
    /// Write the JSON report here.
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RetrievalEvalArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long, value_parser = parse_format)]
    format: SourceFormat,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the context paragraphs as a corpus.
    #[arg(long)]
    corpus_out: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
}

fn parse_family(s: &str) -> Result<DatasetFamily, String> {
    s.parse()
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<SourceFormat, String> {
    s.parse()
}

/// Error carrying the exit code to use.
struct Failure(i32, String);

fn io_fail(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_IO, e.to_string())
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_fail(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, content).map_err(|e| io_fail(format!("{}: {e}", path.display())))
}

fn build_config(args: RunArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::load(path).map_err(io_fail)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(f) = args.family {
        cfg.dataset_family = f;
    }
    if let Some(index) = args.index {
        cfg.retriever = Some(RetrieverSpec::Bm25 {
            index,
            corpus: args.corpus,
        });
    } else if let Some(url) = args.retriever_url {
        cfg.retriever = Some(RetrieverSpec::Remote {
            url,
            retry: RetryPolicy::default(),
            max_inflight: 8,
            timeout_secs: 30,
        });
    }
    if let Some(url) = args.llm_url {
        let mut http = HttpBackendConfig::new(url);
        if args.chat {
            http.style = ApiStyle::Chat;
        }
        cfg.llm = Some(LlmSpec::Http { config: http });
    } else if let Some(script) = args.llm_script {
        cfg.llm = Some(LlmSpec::Scripted { script });
    }
    if let Some(model) = args.model {
        cfg.generation.model = model;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(h) = args.hops {
        cfg.hops = h;
    }
    if !args.ablate.is_empty() {
        cfg.ablations = args.ablate.into_iter().collect();
    }
    if !args.top_p.is_empty() {
        cfg.sampling = args.top_p;
    }
    if args.limit.is_some() {
        cfg.limit = args.limit;
    }
    if args.dataset.is_some() {
        cfg.dataset = args.dataset;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    if args.cache_dir.is_some() {
        cfg.cache_dir = args.cache_dir;
    }
    if args.prompts_dir.is_some() {
        cfg.prompts_dir = args.prompts_dir;
    }
    if let Some(c) = args.concurrency {
        cfg.concurrency_limit = c;
    }
    cfg.validate().map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    Ok(cfg)
}

fn cmd_index_build(corpus: &Path, out: &Path, k1: f64, b: f64) -> Result<(), Failure> {
    let corpus: Corpus = load_corpus(corpus).map_err(io_fail)?;
    let index = InvertedIndex::build(&corpus, Bm25Params { k1, b }).map_err(|e| Failure(EXIT_USAGE, e.to_string()))?;
    index.save(out).map_err(io_fail)?;
    println!(
        "indexed {} documents (avg length {:.2}) into {}",
        index.doc_count(),
        index.avg_doc_length(),
        out.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<i32, Failure> {
    let cfg = build_config(args)?;
    let dataset_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| Failure(EXIT_USAGE, "--dataset is required".into()))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| Failure(EXIT_USAGE, "--out is required".into()))?;
    let dataset = load_dataset(&dataset_path).map_err(io_fail)?;
    let runtime = Runtime::from_config(&cfg).map_err(io_fail)?;
    if let Some(RetrieverSpec::Bm25 { corpus: Some(c), .. }) = &cfg.retriever {
        let corpus = load_corpus(c).map_err(io_fail)?;
        let s = summarize_gold_titles(&dataset, &corpus);
        if s.unresolved_titles > 0 {
            eprintln!(
                "warning: {} of {} gold titles are not in the corpus",
                s.unresolved_titles, s.gold_titles
            );
        }
    }
    let summary = run_batch(&dataset, &cfg, runtime.deps(), &out).map_err(io_fail)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    if summary.all_backend_unavailable() {
        eprintln!("error: every question failed because a backend was unreachable");
        return Ok(EXIT_BACKEND);
    }
    Ok(EXIT_OK)
}

fn emit(report: &MetricsReport, json_out: Option<&Path>) -> Result<(), Failure> {
    print!("{}", report.to_table());
    if let Some(path) = json_out {
        write_file(
            path,
            &(serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        )?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let stage: EvalStage = args.stage.parse().map_err(|e| Failure(EXIT_USAGE, format!("{e}")))?;
    let opts = ReportOptions {
        stage,
        best_of_n: !args.first_sample,
    };
    let rep = report(&args.records, &args.dataset, opts).map_err(io_fail)?;
    emit(&rep, args.json_out.as_deref())
}

fn cmd_retrieval_eval(args: RetrievalEvalArgs) -> Result<(), Failure> {
    let (_, records) = read_records(&args.records).map_err(io_fail)?;
    let dataset = load_dataset(&args.dataset).map_err(io_fail)?;
    let mut stages = Vec::new();
    for kind in [
        QueryKind::Original,
        QueryKind::ExternalAug,
        QueryKind::InternalAug,
        QueryKind::Baseline,
    ] {
        if records.iter().any(|r| r.retrieved.iter().any(|s| s.query_kind == kind)) {
            stages.push(EvalStage::Retrieved(kind));
        }
        if records.iter().any(|r| r.filters.iter().any(|f| f.query_kind == kind)) {
            stages.push(EvalStage::Filtered(kind));
        }
    }
    stages.extend([EvalStage::DirectUnion, EvalStage::Pool]);
    println!("{:<26}{:>8}{:>11}{:>13}", "stage", "recall", "precision", "s_precision");
    let mut all = serde_json::Map::new();
    for stage in stages {
        let rep = evaluate(&records, &dataset, ReportOptions { stage, best_of_n: true }).map_err(io_fail)?;
        println!(
            "{:<26}{:>8.4}{:>11.4}{:>13.4}",
            rep.stage, rep.recall, rep.precision, rep.s_precision
        );
        all.insert(
            rep.stage.clone(),
            serde_json::json!({
                "recall": rep.recall,
                "precision": rep.precision,
                "s_precision": rep.s_precision,
                "n_retrieval": rep.n_retrieval,
            }),
        );
    }
    if let Some(path) = args.json_out {
        write_file(&path, &(serde_json::to_string_pretty(&all).expect("json") + "\n"))?;
    }
    Ok(())
}

fn cmd_convert(args: ConvertArgs) -> Result<(), Failure> {
    let raw = std::fs::read_to_string(&args.input).map_err(|e| io_fail(format!("{}: {e}", args.input.display())))?;
    let converted = convert(&raw, args.format, args.limit).map_err(io_fail)?;
    let lines: String = converted
        .examples
        .iter()
        .map(|e| serde_json::to_string(e).expect("example serializes") + "\n")
        .collect();
    write_file(&args.out, &lines)?;
    if let Some(path) = &args.corpus_out {
        let corpus = Corpus::from_documents(converted.documents).map_err(io_fail)?;
        write_file(path, &corpus.to_jsonl())?;
        println!("wrote {} documents to {}", corpus.len(), path.display());
    }
    println!("wrote {} examples to {}", converted.examples.len(), args.out.display());
    Ok(())
}

/// Parses `argv` (including the program name) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Index {
            action: IndexAction::Build { corpus, out, k1, b },
        } => cmd_index_build(&corpus, &out, k1, b).map(|_| EXIT_OK),
        Command::Run(args) => cmd_run(*args),
        Command::Eval(args) => cmd_eval(args).map(|_| EXIT_OK),
        Command::RetrievalEval(args) => cmd_retrieval_eval(args).map(|_| EXIT_OK),
        Command::ConvertDataset(args) => cmd_convert(args).map(|_| EXIT_OK),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}
