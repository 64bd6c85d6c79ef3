//! LLM backends: HTTP endpoints plus a transcript store for recording and
//! offline replay.

pub mod http;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{HttpBackend, WireFormat};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("backend {0} unavailable: {1}")]
    BackendUnavailable(String, String),
    #[error("no recorded transcript for request {0}")]
    ReplayMiss(String),
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response shape: {0}")]
    BadResponse(String),
    #[error("transcript store {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown backend {0}")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            max_output_tokens: 8192,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Formulation,
    Refinement,
    Realization,
    Baseline,
    Distillation,
    HarnessGeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub backend_id: String,
    pub prompt: String,
    pub sampling: Sampling,
    pub purpose: Purpose,
}

impl LlmRequest {
    /// sha256 over the canonical JSON of (backend_id, prompt, sampling).
    pub fn request_hash(&self) -> String {
        request_hash(&self.backend_id, &self.prompt, &self.sampling)
    }
}

pub fn request_hash(backend_id: &str, prompt: &str, sampling: &Sampling) -> String {
    // serde_json maps are sorted by key, so this is canonical
    let canon = serde_json::json!({
        "backend_id": backend_id,
        "prompt": prompt,
        "sampling": {
            "max_output_tokens": sampling.max_output_tokens,
            "temperature": sampling.temperature,
        },
    });
    hex::encode(Sha256::digest(canon.to_string().as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub trait LlmBackend: Send + Sync {
    fn id(&self) -> &str;
    fn sampling(&self) -> Sampling;
    /// Raw model output for the request.
    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError>;

    fn request(&self, prompt: String, purpose: Purpose) -> LlmRequest {
        LlmRequest {
            backend_id: self.id().to_string(),
            prompt,
            sampling: self.sampling(),
            purpose,
        }
    }

    fn ask(&self, prompt: String, purpose: Purpose) -> Result<String, LlmError> {
        let req = self.request(prompt, purpose);
        self.complete(&req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmTranscript {
    pub request_hash: String,
    pub backend_id: String,
    pub purpose: Purpose,
    pub sampling: Sampling,
    pub prompt: String,
    pub response: String,
    pub recorded_at: String,
}

/// Directory of `<request_hash>.json` transcripts, loaded once; writes are
/// serialized.
#[derive(Debug)]
pub struct TranscriptStore {
    dir: PathBuf,
    entries: RwLock<BTreeMap<String, LlmTranscript>>,
    write_lock: Mutex<()>,
    warnings: Vec<String>,
}

impl TranscriptStore {
    /// Loads every readable transcript under `dir` (created if absent).
    /// Corrupt files are skipped with a warning.
    pub fn open(dir: &Path) -> Result<Self, LlmError> {
        let io = |source| LlmError::Io {
            path: dir.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();

        let mut entries = BTreeMap::new();
        let mut warnings = Vec::new();
        for p in paths {
            let parsed = std::fs::read_to_string(&p)
                .map_err(|e| e.to_string())
                .and_then(|t| serde_json::from_str::<LlmTranscript>(&t).map_err(|e| e.to_string()));
            match parsed {
                Ok(t) => {
                    entries.insert(t.request_hash.clone(), t);
                }
                Err(e) => {
                    let msg = format!("skipping transcript {}: {e}", p.display());
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
            }
        }
        Ok(TranscriptStore {
            dir: dir.to_path_buf(),
            entries: RwLock::new(entries),
            write_lock: Mutex::new(()),
            warnings,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn lookup(&self, hash: &str) -> Option<String> {
        self.entries.read().expect("store lock").get(hash).map(|t| t.response.clone())
    }

    pub fn hashes(&self) -> Vec<String> {
        self.entries.read().expect("store lock").keys().cloned().collect()
    }

    pub fn insert(&self, transcript: LlmTranscript) -> Result<(), LlmError> {
        let _guard = self.write_lock.lock().expect("store write lock");
        let path = self.dir.join(format!("{}.json", transcript.request_hash));
        let text = serde_json::to_string_pretty(&transcript).expect("transcript serializes") + "\n";
        std::fs::write(&path, text).map_err(|source| LlmError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.entries
            .write()
            .expect("store lock")
            .insert(transcript.request_hash.clone(), transcript);
        Ok(())
    }

    pub fn record(&self, req: &LlmRequest, response: &str) -> Result<(), LlmError> {
        self.insert(LlmTranscript {
            request_hash: req.request_hash(),
            backend_id: req.backend_id.clone(),
            purpose: req.purpose,
            sampling: req.sampling,
            prompt: req.prompt.clone(),
            response: response.to_string(),
            recorded_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }
}

/// Answers only from recorded transcripts.
pub struct ReplayBackend {
    id: String,
    sampling: Sampling,
    store: Arc<TranscriptStore>,
}

impl ReplayBackend {
    pub fn new(id: &str, sampling: Sampling, store: Arc<TranscriptStore>) -> Self {
        ReplayBackend {
            id: id.to_string(),
            sampling,
            store,
        }
    }
}

impl LlmBackend for ReplayBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn sampling(&self) -> Sampling {
        self.sampling
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let hash = req.request_hash();
        self.store.lookup(&hash).ok_or(LlmError::ReplayMiss(hash))
    }
}

/// Forwards to `inner` and records every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    store: Arc<TranscriptStore>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B, store: Arc<TranscriptStore>) -> Self {
        RecordingBackend { inner, store }
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn sampling(&self) -> Sampling {
        self.inner.sampling()
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(req)?;
        self.store.record(req, &response)?;
        Ok(response)
    }
}

impl LlmBackend for Box<dyn LlmBackend> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn sampling(&self) -> Sampling {
        (**self).sampling()
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        (**self).complete(req)
    }
}

/// Sends each request to the backend configured for its purpose, falling
/// back to `default`.
pub struct StageRouter {
    default: Box<dyn LlmBackend>,
    routes: BTreeMap<String, Box<dyn LlmBackend>>,
}

fn purpose_key(p: Purpose) -> String {
    serde_json::to_value(p)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

impl StageRouter {
    pub fn new(default: Box<dyn LlmBackend>) -> Self {
        StageRouter {
            default,
            routes: BTreeMap::new(),
        }
    }

    pub fn route(mut self, purpose: Purpose, backend: Box<dyn LlmBackend>) -> Self {
        self.routes.insert(purpose_key(purpose), backend);
        self
    }

    pub fn backend_for(&self, purpose: Purpose) -> &dyn LlmBackend {
        self.routes
            .get(&purpose_key(purpose))
            .map(|b| b.as_ref())
            .unwrap_or(self.default.as_ref())
    }
}

impl LlmBackend for StageRouter {
    fn id(&self) -> &str {
        self.default.id()
    }

    fn sampling(&self) -> Sampling {
        self.default.sampling()
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        self.backend_for(req.purpose).complete(req)
    }

    fn ask(&self, prompt: String, purpose: Purpose) -> Result<String, LlmError> {
        self.backend_for(purpose).ask(prompt, purpose)
    }
}

/// Scripted backend: answers by purpose, in order. Useful for tests and for
/// producing fixture transcripts.
pub struct CannedBackend {
    id: String,
    sampling: Sampling,
    responses: Mutex<BTreeMap<String, Vec<String>>>,
}

impl CannedBackend {
    pub fn new(id: &str) -> Self {
        CannedBackend {
            id: id.to_string(),
            sampling: Sampling::default(),
            responses: Mutex::new(BTreeMap::new()),
        }
    }

    /// Queue `response` for the next request whose prompt contains `needle`.
    pub fn respond_to(self, needle: &str, response: &str) -> Self {
        self.responses
            .lock()
            .expect("canned lock")
            .entry(needle.to_string())
            .or_default()
            .push(response.to_string());
        self
    }
}

impl LlmBackend for CannedBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn sampling(&self) -> Sampling {
        self.sampling
    }

    fn complete(&self, req: &LlmRequest) -> Result<String, LlmError> {
        let mut map = self.responses.lock().expect("canned lock");
        // longest matching needle wins so specific keys beat generic ones
        let key = map
            .iter()
            .filter(|(k, v)| !v.is_empty() && req.prompt.contains(k.as_str()))
            .max_by_key(|(k, _)| k.len())
            .map(|(k, _)| k.clone());
        match key {
            Some(k) => Ok(map.get_mut(&k).expect("key present").remove(0)),
            None => Err(LlmError::BackendUnavailable(self.id.clone(), "no canned response".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(prompt: &str) -> LlmRequest {
        LlmRequest {
            backend_id: "b".into(),
            prompt: prompt.into(),
            sampling: Sampling::default(),
            purpose: Purpose::Formulation,
        }
    }

    #[test]
    fn hash_depends_on_every_field_but_purpose() {
        let a = req("x");
        let mut b = a.clone();
        b.purpose = Purpose::Realization;
        assert_eq!(a.request_hash(), b.request_hash());
        b.sampling.temperature = 0.5;
        assert_ne!(a.request_hash(), b.request_hash());
        let mut c = a.clone();
        c.backend_id = "other".into();
        assert_ne!(a.request_hash(), c.request_hash());
        assert_ne!(a.request_hash(), req("x ").request_hash());
        assert_eq!(a.request_hash().len(), 64);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(TranscriptStore::open(dir.path()).unwrap());
        let rec = RecordingBackend::new(CannedBackend::new("b").respond_to("x", "answer"), store.clone());
        assert_eq!(rec.complete(&req("x")).unwrap(), "answer");

        let reopened = Arc::new(TranscriptStore::open(dir.path()).unwrap());
        let replay = ReplayBackend::new("b", Sampling::default(), reopened);
        assert_eq!(replay.complete(&req("x")).unwrap(), "answer");
        assert!(matches!(replay.complete(&req("y")), Err(LlmError::ReplayMiss(_))));
    }

    #[test]
    fn router_dispatches_by_purpose() {
        let r = StageRouter::new(Box::new(CannedBackend::new("big").respond_to("", "from big")))
            .route(Purpose::Formulation, Box::new(CannedBackend::new("small").respond_to("", "from small")));
        assert_eq!(r.ask("x".into(), Purpose::Formulation).unwrap(), "from small");
        assert_eq!(r.ask("x".into(), Purpose::Realization).unwrap(), "from big");
        assert_eq!(r.backend_for(Purpose::Formulation).id(), "small");
    }

    #[test]
    fn canned_prefers_longest_needle() {
        let c = CannedBackend::new("c").respond_to("a", "short").respond_to("abc", "long");
        assert_eq!(c.complete(&req("xxabcxx")).unwrap(), "long");
        assert_eq!(c.complete(&req("xxabcxx")).unwrap(), "short");
        assert!(c.complete(&req("xxabcxx")).is_err());
    }
}
