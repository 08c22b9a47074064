mod common;

use std::time::Duration;

use blendfilter::llm::{ApiStyle, HttpBackend, HttpBackendConfig, LlmBackend, LlmError, LlmRequest};
use blendfilter::retrieval::{RemoteRetriever, RetrievalError, Retriever};
use blendfilter::util::RetryPolicy;
use common::MockServer;

const FAST: RetryPolicy = RetryPolicy {
    max_retries: 3,
    base_delay_ms: 1,
    max_delay_ms: 5,
};

fn backend(url: &str, style: ApiStyle) -> HttpBackend {
    let mut config = HttpBackendConfig::new(url);
    config.retry = FAST;
    config.style = style;
    config.timeout_secs = 5;
    HttpBackend::new(config, Some("test-key".into()))
}

fn request() -> LlmRequest {
    LlmRequest {
        model: "m".into(),
        prompt: "Question: who?".into(),
        max_tokens: 32,
        temperature: 0.0,
        top_p: 0.5,
        stop: vec![],
    }
}

fn completion(text: &str) -> String {
    serde_json::json!({"choices": [{"text": text, "finish_reason": "stop"}]}).to_string()
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let server = MockServer::start(vec![(429, "{}".into()), (429, "{}".into()), (200, completion("Paris"))]);
    let resp = backend(&server.url, ApiStyle::Completions)
        .complete(&request())
        .unwrap();
    assert_eq!(resp.text, "Paris");
    assert!(!resp.cached);
    assert_eq!(server.request_count(), 3);
    let body: serde_json::Value = serde_json::from_str(&server.requests.lock().unwrap()[2]).unwrap();
    assert_eq!(body["prompt"], "Question: who?");
    assert_eq!(body["top_p"], 0.5);
    assert_eq!(body["max_tokens"], 32);
}

#[test]
fn persistent_server_errors_exhaust_retries() {
    let server = MockServer::start(vec![(503, "{}".into()); 4]);
    let err = backend(&server.url, ApiStyle::Completions)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable(_)), "{err:?}");
    assert_eq!(server.request_count(), 4);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = MockServer::start(vec![(401, "{}".into()), (200, completion("x"))]);
    let err = backend(&server.url, ApiStyle::Completions)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::AuthFailure(_)), "{err:?}");
    assert_eq!(server.request_count(), 1);
}

#[test]
fn client_errors_and_bad_bodies() {
    let server = MockServer::start(vec![
        (400, "{\"error\":\"bad\"}".into()),
        (200, "{\"choices\":[]}".into()),
    ]);
    let b = backend(&server.url, ApiStyle::Completions);
    assert!(matches!(b.complete(&request()), Err(LlmError::Rejected(_))));
    assert!(matches!(b.complete(&request()), Err(LlmError::MalformedResponse(_))));
}

#[test]
fn chat_style_round_trip() {
    let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "Yes"}, "finish_reason": "length"}]});
    let server = MockServer::start(vec![(200, body.to_string())]);
    let resp = backend(&server.url, ApiStyle::Chat).complete(&request()).unwrap();
    assert_eq!(resp.text, "Yes");
    let sent: serde_json::Value = serde_json::from_str(&server.requests.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["messages"][0]["content"], "Question: who?");
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let err = backend("http://127.0.0.1:1", ApiStyle::Completions)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable(_)), "{err:?}");
}

fn docs(scores: &[f64]) -> String {
    let documents: Vec<_> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| serde_json::json!({"doc_id": format!("r{i}"), "title": format!("T{i}"), "text": "body", "score": s}))
        .collect();
    serde_json::json!({ "documents": documents }).to_string()
}

fn remote(url: &str) -> RemoteRetriever {
    RemoteRetriever::new(url, FAST, 2, Duration::from_secs(5))
}

#[test]
fn remote_retriever_truncates_to_k() {
    let server = MockServer::start(vec![(200, docs(&[3.0, 2.0, 1.0]))]);
    let set = remote(&server.url).retrieve("who wrote it", 2).unwrap();
    assert_eq!(set.titles(), vec!["T0", "T1"]);
    assert_eq!(set.docs[1].rank, 1);
    let sent: serde_json::Value = serde_json::from_str(&server.requests.lock().unwrap()[0]).unwrap();
    assert_eq!(sent, serde_json::json!({"query": "who wrote it", "k": 2}));
}

#[test]
fn remote_retriever_rejects_bad_order_and_retries() {
    let server = MockServer::start(vec![(200, docs(&[1.0, 2.0]))]);
    assert!(matches!(
        remote(&server.url).retrieve("q", 5),
        Err(RetrievalError::MalformedResponse(_))
    ));

    let server = MockServer::start(vec![(502, "{}".into()), (200, docs(&[1.0]))]);
    assert_eq!(remote(&server.url).retrieve("q", 5).unwrap().len(), 1);

    let server = MockServer::start(vec![(500, "{}".into()); 4]);
    assert!(matches!(
        remote(&server.url).retrieve("q", 5),
        Err(RetrievalError::BackendUnavailable(_))
    ));
    assert_eq!(server.request_count(), 4);
}
