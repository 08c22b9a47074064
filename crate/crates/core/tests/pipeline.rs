mod common;

use std::io::Write;

use blendfilter::eval::{evaluate, EvalError, ReportOptions};
use blendfilter::llm::ScriptedBackend;
use blendfilter::pipeline::{
    read_records, run_batch, run_blendfilter, run_question, Deps, Method, PipelineConfig, RecordStatus,
};
use blendfilter::retrieval::QueryKind;
use common::{normalized, toy_dir, Toy};

#[test]
fn records_replay_from_their_transcripts() {
    let toy = Toy::load();
    let (_, golden) = read_records(toy_dir().join("golden_records.jsonl")).unwrap();
    for rec in &golden {
        let replay = ScriptedBackend::from_transcripts(
            rec.llm_transcripts()
                .into_iter()
                .map(|c| (c.prompt.as_str(), c.response.as_str())),
        );
        let deps = Deps {
            retriever: &toy.index,
            llm: &replay,
            prompts: &toy.prompts,
        };
        let again = run_question(toy.example(&rec.qid), &toy.config, deps, &rec.config_fingerprint);
        assert_eq!(normalized(&again), normalized(rec), "{}", rec.qid);
        assert_eq!(replay.call_count(), rec.llm_calls);
    }
}

#[test]
fn stage_failures_are_captured_per_question() {
    let toy = Toy::load();
    let empty = ScriptedBackend::new(vec![]);
    let deps = Deps {
        retriever: &toy.index,
        llm: &empty,
        prompts: &toy.prompts,
    };
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let summary = run_batch(&toy.dataset, &toy.config, deps, &out).unwrap();
    assert_eq!((summary.failed, summary.backend_unavailable), (4, 0));
    assert!(!summary.all_backend_unavailable());
    let (_, recs) = read_records(&out).unwrap();
    for r in &recs {
        assert_eq!(r.status, RecordStatus::Failed);
        assert!(r.error.is_some() && r.prediction.is_none());
        // the first retrieval happened before the first LLM call failed
        assert_eq!(r.retrieval_calls, 1);
    }
    let report = evaluate(&recs, &toy.dataset, ReportOptions::default()).unwrap();
    assert_eq!((report.failed, report.em), (4, 0.0));
}

#[test]
fn interrupted_output_resumes() {
    let toy = Toy::load();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let partial = PipelineConfig {
        limit: Some(2),
        ..toy.config.clone()
    };
    run_batch(&toy.dataset, &partial, toy.deps(), &out).unwrap();
    std::fs::OpenOptions::new()
        .append(true)
        .open(&out)
        .unwrap()
        .write_all(b"{\"qid\":\"toy-3\",\"quest")
        .unwrap();
    let summary = run_batch(&toy.dataset, &toy.config, toy.deps(), &out).unwrap();
    assert_eq!((summary.skipped, summary.processed), (2, 2));
    let (_, recs) = read_records(&out).unwrap();
    let qids: Vec<&str> = recs.iter().map(|r| r.qid.as_str()).collect();
    assert_eq!(qids, ["toy-1", "toy-2", "toy-3", "toy-4"]);
}

#[test]
fn two_hop_external_augmentation() {
    let toy = Toy::load();
    let config = PipelineConfig {
        hops: 2,
        ..toy.config.clone()
    };
    let rec = run_blendfilter(toy.example("toy-1"), &config, toy.deps());
    assert_eq!(rec.status, RecordStatus::Ok, "{:?}", rec.error);
    assert_eq!(rec.augmentation.external_hops.len(), 2);
    // identical query texts are retrieved once per question
    let texts: std::collections::BTreeSet<&str> = rec
        .augmentation
        .external_hops
        .iter()
        .map(|h| h.retrieved.query_text.as_str())
        .chain(rec.retrieved.iter().map(|s| s.query_text.as_str()))
        .collect();
    assert_eq!(rec.retrieval_calls, texts.len());
    assert_eq!(
        rec.augmentation.external_hops[0].retrieved.query_text,
        rec.retrieved[0].query_text
    );
    assert!(rec.check_invariants().is_ok());
    let kinds: Vec<QueryKind> = rec.retrieved.iter().map(|s| s.query_kind).collect();
    assert_eq!(
        kinds,
        [QueryKind::Original, QueryKind::ExternalAug, QueryKind::InternalAug]
    );
}

#[test]
fn baselines_have_expected_shapes() {
    let toy = Toy::load();
    for method in Method::ALL {
        let config = PipelineConfig {
            method,
            ..toy.config.clone()
        };
        let fp = toy.deps().fingerprint(&config);
        let rec = run_question(toy.example("toy-3"), &config, toy.deps(), &fp);
        assert_eq!(rec.status, RecordStatus::Ok, "{method}: {:?}", rec.error);
        assert_eq!(rec.retrieved.is_empty(), !method.uses_retrieval(), "{method}");
        if method != Method::Blendfilter {
            assert!(rec.filters.is_empty() && rec.bundle.is_none());
        }
        assert!(rec.check_invariants().is_ok(), "{method}");
    }
}

#[test]
fn fingerprint_tracks_semantics_only() {
    let toy = Toy::load();
    let base = toy.deps().fingerprint(&toy.config);
    let moved = PipelineConfig {
        concurrency_limit: 8,
        out: Some("elsewhere.jsonl".into()),
        ..toy.config.clone()
    };
    assert_eq!(toy.deps().fingerprint(&moved), base);
    let k3 = PipelineConfig {
        k: 3,
        ..toy.config.clone()
    };
    assert_ne!(toy.deps().fingerprint(&k3), base);
}

#[test]
fn evaluation_errors() {
    let toy = Toy::load();
    assert!(matches!(
        evaluate(&[], &toy.dataset, ReportOptions::default()),
        Err(EvalError::EmptyRecords)
    ));
    let (_, recs) = read_records(toy_dir().join("golden_records.jsonl")).unwrap();
    let report = evaluate(&recs, &toy.dataset, ReportOptions::default()).unwrap();
    assert_eq!((report.n, report.em, report.recall), (4, 1.0, 1.0));
    assert!(matches!(
        evaluate(&recs, &toy.dataset[..1], ReportOptions::default()),
        Err(EvalError::UnknownQid(_))
    ));
}
