#![allow(dead_code)]

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use blendfilter::corpus::{load_corpus, load_dataset, Corpus};
use blendfilter::llm::ScriptedBackend;
use blendfilter::pipeline::{Deps, PipelineConfig, RunRecord};
use blendfilter::prompts::{DatasetFamily, PromptSet};
use blendfilter::retrieval::{Bm25Params, InvertedIndex};
use blendfilter::QaExample;

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy")
}

/// Everything needed to run the toy fixture in-process with an inspectable
/// scripted backend.
pub struct Toy {
    pub config: PipelineConfig,
    pub dataset: Vec<QaExample>,
    pub index: InvertedIndex,
    pub llm: ScriptedBackend,
    pub prompts: PromptSet,
}

impl Toy {
    pub fn load() -> Self {
        let dir = toy_dir();
        let config = PipelineConfig::load(dir.join("config.json")).expect("toy config");
        let corpus: Corpus = load_corpus(dir.join("corpus.jsonl")).expect("toy corpus");
        Self {
            dataset: load_dataset(dir.join("dataset.jsonl")).expect("toy dataset"),
            index: InvertedIndex::build(&corpus, Bm25Params::default()).expect("index"),
            llm: ScriptedBackend::load(dir.join("script.json")).expect("toy script"),
            prompts: PromptSet::builtin(DatasetFamily::HotpotqaLike),
            config,
        }
    }

    pub fn deps(&self) -> Deps<'_> {
        Deps {
            retriever: &self.index,
            llm: &self.llm,
            prompts: &self.prompts,
        }
    }

    pub fn example(&self, qid: &str) -> &QaExample {
        self.dataset.iter().find(|e| e.qid == qid).expect("qid in toy dataset")
    }
}

/// Records file content with timings blanked, the only field allowed to
/// differ between runs.
pub fn strip_timings(content: &str) -> String {
    let mut out = String::new();
    for (i, line) in content.lines().enumerate() {
        if i == 0 {
            out.push_str(line);
        } else {
            let mut v: serde_json::Value = serde_json::from_str(line).expect("record line");
            v["timings_ms"] = serde_json::json!({});
            out.push_str(&serde_json::to_string(&v).unwrap());
        }
        out.push('\n');
    }
    out
}

pub fn normalized(rec: &RunRecord) -> serde_json::Value {
    let mut v = serde_json::to_value(rec.without_timings()).unwrap();
    clear_cached(&mut v);
    v
}

fn clear_cached(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            if let Some(c) = m.get_mut("cached") {
                *c = serde_json::Value::Bool(false);
            }
            m.values_mut().for_each(clear_cached);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(clear_cached),
        _ => {}
    }
}

/// Minimal HTTP/1.1 server replying with a fixed queue of responses, one per
/// connection. Received request bodies are kept for inspection.
pub struct MockServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<String>>>,
}

impl MockServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let mut queue: VecDeque<(u16, String)> = responses.into();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let Some((status, body)) = queue.pop_front() else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
                let mut buf = vec![0; len];
                let _ = reader.read_exact(&mut buf);
                log.lock().unwrap().push(String::from_utf8_lossy(&buf).into_owned());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Self { url, requests }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}
