//! Per-question orchestration for blendfilter and the baselines.

use std::collections::BTreeSet;
use std::time::Instant;

use super::config::{Ablation, Deps, Method, PipelineConfig};
use super::record::{RecordError, RecordStatus, RunRecord, Warning, WarningKind};
use crate::answer::{sample_answers, AnswerStyle};
use crate::blending::{build_bundle, external_augment, BlendOptions, CONCAT_DELIMITER};
use crate::corpus::{Document, QaExample};
use crate::error::StageError;
use crate::filtering::{filter_set, union_direct, union_filtered};
use crate::llm::Generator;
use crate::retrieval::{MemoRetriever, QueryKind, RetrievedSet, Retriever};

struct Ctx<'a> {
    ex: &'a QaExample,
    config: &'a PipelineConfig,
    deps: Deps<'a>,
    retriever: &'a MemoRetriever<'a>,
    gen: Generator<'a>,
}

fn timed<T>(rec: &mut RunRecord, stage: &str, f: impl FnOnce(&mut RunRecord) -> T) -> T {
    let start = Instant::now();
    let out = f(rec);
    *rec.timings_ms.entry(stage.to_string()).or_default() += start.elapsed().as_millis() as u64;
    out
}

fn retrieve(ctx: &Ctx<'_>, kind: QueryKind, text: &str) -> Result<RetrievedSet, StageError> {
    Ok(ctx.retriever.retrieve(text, ctx.config.k)?.with_kind(kind))
}

fn answer(ctx: &Ctx<'_>, rec: &mut RunRecord, style: AnswerStyle) -> Result<(), StageError> {
    let docs: Vec<Document> = rec.pool.documents().cloned().collect();
    let answers = timed(rec, "answer", |_| {
        sample_answers(
            &ctx.ex.question,
            &docs,
            style,
            ctx.ex.task_kind,
            ctx.gen,
            ctx.deps.prompts,
            ctx.config.per_doc_char_budget,
            &ctx.config.sampling,
        )
    })?;
    rec.answers = answers;
    Ok(())
}

fn blendfilter(ctx: &Ctx<'_>, rec: &mut RunRecord) -> Result<(), StageError> {
    let config = ctx.config;
    let q = ctx.ex.question.as_str();
    let opts = BlendOptions {
        external: !config.has(Ablation::NoQEx),
        internal: !config.has(Ablation::NoQIn),
        hops: config.hops,
        k: config.k,
        doc_char_budget: config.per_doc_char_budget,
    };
    let (bundle, trace) = timed(rec, "blend", |_| {
        build_bundle(q, opts, ctx.retriever, ctx.gen, ctx.deps.prompts)
    })?;
    rec.augmentation = trace;

    let mut queries = Vec::new();
    if !config.has(Ablation::NoQ) {
        queries.push((QueryKind::Original, bundle.original.clone()));
    }
    if let Some(text) = &bundle.external_aug {
        queries.push((QueryKind::ExternalAug, text.clone()));
    }
    if let Some(text) = &bundle.internal_aug {
        queries.push((QueryKind::InternalAug, text.clone()));
    }
    rec.bundle = Some(bundle);

    for (kind, text) in queries {
        let set = timed(rec, "retrieve", |_| retrieve(ctx, kind, &text))?;
        rec.retrieved.push(set);
    }

    if config.has(Ablation::NoFilter) {
        rec.pool = union_direct(&rec.retrieved)?;
    } else {
        for i in 0..rec.retrieved.len() {
            let outcome = timed(rec, "filter", |rec| {
                filter_set(
                    q,
                    &rec.retrieved[i],
                    ctx.gen,
                    ctx.deps.prompts,
                    config.per_doc_char_budget,
                )
            })?;
            rec.filters.push(outcome);
        }
        rec.pool = union_filtered(&rec.filters, &rec.retrieved)?;
    }
    answer(ctx, rec, AnswerStyle::Cot)
}

fn baseline(ctx: &Ctx<'_>, rec: &mut RunRecord) -> Result<(), StageError> {
    let q = ctx.ex.question.as_str();
    let config = ctx.config;
    let style = match config.method {
        Method::Direct | Method::DirectRetrieval => AnswerStyle::Direct,
        _ => AnswerStyle::Cot,
    };
    match config.method {
        Method::Direct | Method::Cot => {}
        Method::DirectRetrieval | Method::CotRetrieval => {
            let set = timed(rec, "retrieve", |_| retrieve(ctx, QueryKind::Baseline, q))?;
            rec.retrieved.push(set);
        }
        Method::Retgen => {
            let mut query = q.to_string();
            if config.hops > 1 {
                let ext = timed(rec, "blend", |_| {
                    external_augment(
                        q,
                        ctx.retriever,
                        ctx.gen,
                        ctx.deps.prompts,
                        config.k,
                        config.hops - 1,
                        config.per_doc_char_budget,
                    )
                })?;
                query = ext.query;
                rec.augmentation.external_hops = ext.hops;
            }
            let set = timed(rec, "retrieve", |_| retrieve(ctx, QueryKind::Baseline, &query))?;
            rec.retrieved.push(set);
        }
        Method::Blendfilter => unreachable!("handled by blendfilter"),
    }
    rec.pool = union_direct(&rec.retrieved)?;
    answer(ctx, rec, style)
}

fn collect_warnings(rec: &RunRecord, budget: usize) -> Vec<Warning> {
    let mut out = Vec::new();
    let hop_sets = rec.augmentation.external_hops.iter().map(|h| &h.retrieved);
    let sets: Vec<&RetrievedSet> = hop_sets.chain(&rec.retrieved).collect();
    for s in &sets {
        if s.empty_query {
            out.push(Warning {
                kind: WarningKind::EmptyQuery,
                detail: s.query_kind.as_str().to_string(),
            });
        }
    }
    for f in &rec.filters {
        if f.fallback_applied {
            out.push(Warning {
                kind: WarningKind::FilterFallback,
                detail: f.query_kind.as_str().to_string(),
            });
        }
    }
    let mut seen = BTreeSet::new();
    for d in sets.iter().flat_map(|s| &s.docs) {
        let doc = &d.document;
        if doc.text.chars().count() > budget && seen.insert(doc.doc_id.clone()) {
            out.push(Warning {
                kind: WarningKind::Truncation,
                detail: doc.doc_id.clone(),
            });
        }
    }
    out
}

/// Runs one question. Stage failures are captured in the record.
pub fn run_question(ex: &QaExample, config: &PipelineConfig, deps: Deps<'_>, fingerprint: &str) -> RunRecord {
    let start = Instant::now();
    let memo = MemoRetriever::new(deps.retriever);
    let ctx = Ctx {
        ex,
        config,
        deps,
        retriever: &memo,
        gen: Generator::new(deps.llm, &config.generation),
    };
    let mut rec = RunRecord::new(ex, config.method, fingerprint, CONCAT_DELIMITER);
    let result = match config.method {
        Method::Blendfilter => blendfilter(&ctx, &mut rec),
        _ => baseline(&ctx, &mut rec),
    };
    match result {
        Ok(()) => rec.prediction = rec.answers.first().map(|a| a.extracted_answer.clone()),
        Err(e) => {
            rec.status = RecordStatus::Failed;
            rec.error = Some(RecordError {
                kind: e.kind().to_string(),
                message: e.to_string(),
            });
        }
    }
    rec.retrieval_calls = memo.backend_calls();
    rec.llm_calls = rec.llm_transcripts().len();
    rec.warnings = collect_warnings(&rec, config.per_doc_char_budget);
    rec.timings_ms
        .insert("total".into(), start.elapsed().as_millis() as u64);
    rec
}

pub fn run_blendfilter(ex: &QaExample, config: &PipelineConfig, deps: Deps<'_>) -> RunRecord {
    let config = PipelineConfig {
        method: Method::Blendfilter,
        ..config.clone()
    };
    run_question(ex, &config, deps, &deps.fingerprint(&config))
}

pub fn run_baseline(ex: &QaExample, config: &PipelineConfig, deps: Deps<'_>) -> RunRecord {
    run_question(ex, config, deps, &deps.fingerprint(config))
}
