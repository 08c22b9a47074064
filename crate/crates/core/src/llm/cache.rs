//! Content-addressed on-disk response cache.
//!
//! One JSON file per key under the cache directory. The key is the SHA-256
//! of the canonical request serialization. Writes go to a temporary file
//! that is then renamed into place.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{FinishReason, LlmBackend, LlmError, LlmRequest, LlmResponse};
use crate::util::sha256_hex;

/// Field order here is the canonical serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub stop: Vec<String>,
}

impl From<&LlmRequest> for CanonicalRequest {
    fn from(r: &LlmRequest) -> Self {
        Self {
            model: r.model.clone(),
            prompt: r.prompt.clone(),
            max_tokens: r.max_tokens,
            temperature: r.temperature,
            top_p: r.top_p,
            stop: r.stop.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedResponse {
    text: String,
    finish_reason: FinishReason,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    request: CanonicalRequest,
    response: CachedResponse,
}

pub fn cache_key(request: &LlmRequest) -> String {
    let canonical = CanonicalRequest::from(request);
    sha256_hex(serde_json::to_vec(&canonical).expect("request serializes"))
}

fn entry_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("{key}.json"))
}

fn io_err(path: &Path, source: std::io::Error) -> LlmError {
    LlmError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_entry(dir: &Path, key: &str, request: &LlmRequest) -> Result<Option<LlmResponse>, LlmError> {
    let path = entry_path(dir, key);
    let raw = match fs::read_to_string(&path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(io_err(&path, e)),
    };
    let entry: CacheEntry = serde_json::from_str(&raw).map_err(|_| LlmError::CacheCorrupt(key.to_string()))?;
    if entry.key != key || entry.request != CanonicalRequest::from(request) {
        return Err(LlmError::CacheCorrupt(key.to_string()));
    }
    Ok(Some(LlmResponse {
        text: entry.response.text,
        finish_reason: entry.response.finish_reason,
        cached: true,
    }))
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn write_entry(dir: &Path, key: &str, request: &LlmRequest, response: &LlmResponse) -> Result<(), LlmError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let entry = CacheEntry {
        key: key.to_string(),
        request: request.into(),
        response: CachedResponse {
            text: response.text.clone(),
            finish_reason: response.finish_reason,
        },
    };
    let tmp = dir.join(format!(
        ".{key}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, serde_json::to_vec_pretty(&entry).expect("entry serializes")).map_err(|e| io_err(&tmp, e))?;
    let path = entry_path(dir, key);
    fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
}

/// Returns the cached response for `request`, calling `backend` and
/// persisting the result on a miss.
pub fn cached_complete(
    cache_dir: impl AsRef<Path>,
    backend: &dyn LlmBackend,
    request: &LlmRequest,
) -> Result<LlmResponse, LlmError> {
    let dir = cache_dir.as_ref();
    let key = cache_key(request);
    if let Some(hit) = read_entry(dir, &key, request)? {
        return Ok(hit);
    }
    let mut resp = backend.complete(request)?;
    resp.cached = false;
    write_entry(dir, &key, request, &resp)?;
    Ok(resp)
}

/// Backend wrapper routing every call through [`cached_complete`]. Identical
/// concurrent misses are serialized so the inner backend sees one call.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl<B: LlmBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl<B: LlmBackend> LlmBackend for CachedBackend<B> {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let key = cache_key(request);
        let lock = self
            .locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(key)
            .or_default()
            .clone();
        let _held = lock.lock().unwrap_or_else(|e| e.into_inner());
        cached_complete(&self.dir, &self.inner, request)
    }

    fn describe(&self) -> serde_json::Value {
        // caching never changes semantics, so it is not part of the identity
        self.inner.describe()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptRule, ScriptedBackend};

    fn req(top_p: f64) -> LlmRequest {
        LlmRequest {
            model: "m".into(),
            prompt: "hello".into(),
            max_tokens: 16,
            temperature: 0.0,
            top_p,
            stop: vec![],
        }
    }

    fn mock() -> ScriptedBackend {
        ScriptedBackend::new(vec![ScriptRule::regex("hello", "world").unwrap()])
    }

    #[test]
    fn second_call_is_cached() {
        let dir = tempfile::tempdir().unwrap();
        let backend = mock();
        let a = cached_complete(dir.path(), &backend, &req(0.0)).unwrap();
        let b = cached_complete(dir.path(), &backend, &req(0.0)).unwrap();
        assert!(!a.cached);
        assert!(b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(backend.call_count(), 1);
    }

    #[test]
    fn top_p_is_part_of_key() {
        assert_ne!(cache_key(&req(0.0)), cache_key(&req(1.0)));
        let dir = tempfile::tempdir().unwrap();
        let backend = mock();
        cached_complete(dir.path(), &backend, &req(0.0)).unwrap();
        cached_complete(dir.path(), &backend, &req(1.0)).unwrap();
        assert_eq!(backend.call_count(), 2);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn corrupt_entry_detected() {
        let dir = tempfile::tempdir().unwrap();
        let key = cache_key(&req(0.0));
        fs::write(entry_path(dir.path(), &key), "{not json").unwrap();
        assert!(matches!(
            cached_complete(dir.path(), &mock(), &req(0.0)),
            Err(LlmError::CacheCorrupt(k)) if k == key
        ));
    }

    #[test]
    fn errors_are_not_cached() {
        let dir = tempfile::tempdir().unwrap();
        let empty = ScriptedBackend::new(vec![]);
        assert!(cached_complete(dir.path(), &empty, &req(0.0)).is_err());
        assert_eq!(fs::read_dir(dir.path()).map(|d| d.count()).unwrap_or(0), 0);
    }

    #[test]
    fn concurrent_identical_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(mock(), dir.path());
        let texts: Vec<String> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..16)
                .map(|_| s.spawn(|| cached.complete(&req(0.0)).unwrap().text))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(texts.iter().all(|t| t == "world"));
        assert_eq!(cached.inner().call_count(), 1);
    }
}
