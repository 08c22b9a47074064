//! HTTP adapter for an external retriever service.
//!
//! Protocol: `POST {endpoint}/retrieve` with `{"query": str, "k": int}`,
//! answered by `{"documents": [{"doc_id", "title", "text", "score"}]}` in
//! descending score order.

use std::collections::HashSet;
use std::time::Duration;

use serde::Deserialize;

use super::{QueryKind, RetrievalError, RetrievedDoc, RetrievedSet, Retriever};
use crate::corpus::Document;
use crate::util::{RetryPolicy, Semaphore};

#[derive(Debug, Deserialize)]
struct RetrieveResponse {
    documents: Vec<RemoteDoc>,
}

#[derive(Debug, Deserialize)]
struct RemoteDoc {
    doc_id: String,
    title: String,
    text: String,
    score: f64,
}

pub struct RemoteRetriever {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    inflight: Semaphore,
}

impl RemoteRetriever {
    pub fn new(endpoint: impl Into<String>, retry: RetryPolicy, max_inflight: usize, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            agent,
            retry,
            inflight: Semaphore::new(max_inflight),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, query_text: &str, k: usize) -> Result<RetrieveResponse, Attempt> {
        let url = format!("{}/retrieve", self.endpoint);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(serde_json::json!({ "query": query_text, "k": k }))
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => resp
                .body_mut()
                .read_json::<RetrieveResponse>()
                .map_err(|e| Attempt::Fatal(RetrievalError::MalformedResponse(e.to_string()))),
            429 | 500..=599 => Err(Attempt::Transient(format!("HTTP {status}"))),
            _ => Err(Attempt::Fatal(RetrievalError::BackendUnavailable(format!(
                "HTTP {status}"
            )))),
        }
    }
}

enum Attempt {
    Transient(String),
    Fatal(RetrievalError),
}

fn validate(resp: RetrieveResponse, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
    let mut seen = HashSet::new();
    let mut docs = Vec::with_capacity(resp.documents.len().min(k));
    let mut prev = f64::INFINITY;
    for (rank, d) in resp.documents.into_iter().enumerate() {
        if !seen.insert(d.doc_id.clone()) {
            return Err(RetrievalError::MalformedResponse(format!(
                "duplicate doc_id {:?}",
                d.doc_id
            )));
        }
        if d.doc_id.is_empty() || d.title.is_empty() {
            return Err(RetrievalError::MalformedResponse(
                "document missing doc_id or title".into(),
            ));
        }
        if !d.score.is_finite() || d.score > prev {
            return Err(RetrievalError::MalformedResponse(
                "documents not in descending score order".into(),
            ));
        }
        prev = d.score;
        if rank < k {
            docs.push(RetrievedDoc {
                document: Document::new(d.doc_id, d.title, d.text),
                score: d.score,
                rank,
            });
        }
    }
    Ok(RetrievedSet::new(QueryKind::Baseline, query_text, docs))
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query_text: &str, k: usize) -> Result<RetrievedSet, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let _permit = self.inflight.acquire();
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.attempt(query_text, k) {
                Ok(resp) => return validate(resp, query_text, k),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => last = msg,
            }
        }
        Err(RetrievalError::BackendUnavailable(format!(
            "{} after {} retries: {last}",
            self.endpoint, self.retry.max_retries
        )))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "remote", "endpoint": self.endpoint })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(docs: &[(&str, f64)]) -> RetrieveResponse {
        RetrieveResponse {
            documents: docs
                .iter()
                .map(|(id, s)| RemoteDoc {
                    doc_id: id.to_string(),
                    title: format!("T{id}"),
                    text: "body".into(),
                    score: *s,
                })
                .collect(),
        }
    }

    #[test]
    fn five_docs_ranked() {
        let set = validate(
            resp(&[("a", 5.0), ("b", 4.0), ("c", 3.0), ("d", 2.0), ("e", 1.0)]),
            "q",
            5,
        )
        .unwrap();
        assert_eq!(set.docs.iter().map(|d| d.rank).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
        set.check_invariants(5).unwrap();
    }

    #[test]
    fn duplicate_rejected() {
        assert!(matches!(
            validate(resp(&[("a", 2.0), ("a", 1.0)]), "q", 5),
            Err(RetrievalError::MalformedResponse(_))
        ));
    }

    #[test]
    fn unordered_rejected_and_extra_truncated() {
        assert!(validate(resp(&[("a", 1.0), ("b", 2.0)]), "q", 5).is_err());
        assert_eq!(
            validate(resp(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]), "q", 2)
                .unwrap()
                .len(),
            2
        );
    }
}
