use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::prompt::{format_number, PromptMode, PromptSpec, CONTEXT_LABELS, LABEL_Y};
use crate::panel::{Field, Panel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    /// Connection, timeout, or HTTP-level failure.
    #[error("transport error: {0}")]
    Transport(String),
    /// The backend has nothing to say for this prompt (exhausted script,
    /// oracle beyond the panel, transcript miss in replay mode).
    #[error("no answer: {0}")]
    NoAnswer(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

/// One call to a completion backend.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub spec: &'a PromptSpec,
    /// Repetition index, starting at 1.
    pub run: u32,
    /// 0 for the first call, 1 for the retry.
    pub attempt: u8,
}

/// Anything that turns a prompt into text.
pub trait CompletionBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for Arc<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Which deterministic test double to build.
pub enum StubKind {
    /// Echo the last observed value of each requested series.
    Persistence,
    /// Answer with the true next-week values from the panel.
    Oracle(Arc<Panel>),
    /// Replay a fixed list of responses, one per call.
    Scripted(Vec<String>),
}

/// Deterministic backend for tests and offline runs.
pub struct StubBackend {
    kind: StubInner,
}

enum StubInner {
    Persistence,
    Oracle(Arc<Panel>),
    Scripted(Mutex<VecDeque<String>>),
}

pub fn stub_backend(kind: StubKind) -> StubBackend {
    let kind = match kind {
        StubKind::Persistence => StubInner::Persistence,
        StubKind::Oracle(panel) => StubInner::Oracle(panel),
        StubKind::Scripted(lines) => StubInner::Scripted(Mutex::new(lines.into())),
    };
    StubBackend { kind }
}

fn labelled_lines(pairs: &[(&str, Option<f64>)]) -> String {
    pairs
        .iter()
        .filter_map(|(label, v)| v.map(|v| format!("{label}: {}", format_number(v))))
        .collect::<Vec<_>>()
        .join("\n")
}

impl StubBackend {
    fn oracle_answer(panel: &Panel, spec: &PromptSpec) -> Result<String, BackendError> {
        let series = panel
            .county(&spec.geography)
            .or_else(|| panel.county(&format!("{} County", spec.geography)))
            .ok_or_else(|| BackendError::NoAnswer(format!("unknown region `{}`", spec.geography)))?;
        let row = series
            .row(spec.prediction_date)
            .ok_or_else(|| BackendError::NoAnswer(format!("{} beyond panel range", spec.prediction_date)))?;
        Ok(match spec.mode {
            PromptMode::UnivariateY => labelled_lines(&[(LABEL_Y, row.get(&Field::Y))]),
            PromptMode::ContextTriple => labelled_lines(&[
                (CONTEXT_LABELS[0], row.x_b),
                (CONTEXT_LABELS[1], row.x_v),
                (CONTEXT_LABELS[2], row.s_t),
            ]),
        })
    }
}

impl CompletionBackend for StubBackend {
    fn model_name(&self) -> &str {
        match self.kind {
            StubInner::Persistence => "stub-persistence",
            StubInner::Oracle(_) => "stub-oracle",
            StubInner::Scripted(_) => "stub-scripted",
        }
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let spec = request.spec;
        match &self.kind {
            StubInner::Persistence => Ok(match spec.mode {
                PromptMode::UnivariateY => labelled_lines(&[(LABEL_Y, spec.last_observed(LABEL_Y))]),
                PromptMode::ContextTriple => {
                    labelled_lines(&CONTEXT_LABELS.map(|label| (label, spec.last_observed(label))))
                }
            }),
            StubInner::Oracle(panel) => Self::oracle_answer(panel, spec),
            StubInner::Scripted(queue) => queue
                .lock()
                .expect("script lock poisoned")
                .pop_front()
                .ok_or_else(|| BackendError::NoAnswer("script exhausted".into())),
        }
    }
}

/// Settings for a chat-completions style HTTP endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_key_var")]
    pub api_key_env_var: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    /// Sent only when set; the endpoint default applies otherwise.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_model() -> String {
    "gpt-5-2025-08-07".into()
}

fn default_key_var() -> String {
    "OPENAI_API_KEY".into()
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_concurrency() -> usize {
    4
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: endpoint_url.into(),
            model_name: default_model(),
            api_key_env_var: default_key_var(),
            timeout_secs: default_timeout_secs(),
            max_concurrency: default_concurrency(),
            temperature: None,
            seed: None,
        }
    }
}

/// Counting semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().expect("semaphore poisoned");
        while *p == 0 {
            p = self.cv.wait(p).expect("semaphore poisoned");
        }
        *p -= 1;
        SemaphoreGuard(self)
    }
}

struct SemaphoreGuard<'a>(&'a Semaphore);

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// Chat-completions client: POSTs `{model, messages: [{role: "user", content}]}`
/// and returns `choices[0].message.content`.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        if config.timeout_secs.is_nan() || config.timeout_secs <= 0.0 {
            return Err(BackendError::Config("timeout must be positive".into()));
        }
        let api_key = std::env::var(&config.api_key_env_var).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!(
                "{} not set; sending requests without Authorization header",
                config.api_key_env_var
            );
        }
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build();
        let in_flight = Semaphore::new(config.max_concurrency);
        Ok(HttpBackend {
            config,
            api_key,
            agent,
            in_flight,
        })
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(t) = self.config.temperature {
            body["temperature"] = t.into();
        }
        if let Some(s) = self.config.seed {
            body["seed"] = s.into();
        }
        body
    }
}

impl CompletionBackend for HttpBackend {
    fn model_name(&self) -> &str {
        &self.config.model_name
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let _permit = self.in_flight.acquire();
        let mut req = self
            .agent
            .post(&self.config.endpoint_url)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let response = req
            .send_json(self.request_body(request.prompt))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let json: serde_json::Value = response
            .into_json()
            .map_err(|e| BackendError::Transport(format!("bad response body: {e}")))?;
        json["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no choices[0].message.content".into()))
    }
}

/// One line of the transcript file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub model: String,
    pub prompt_sha256: String,
    pub run: u32,
    pub response: String,
    pub timestamp: String,
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

type TranscriptKey = (String, String, u32);

/// Append-only JSON-lines cache of backend responses keyed by
/// (model, prompt hash, run).
pub struct TranscriptCache {
    path: PathBuf,
    state: Mutex<(HashMap<TranscriptKey, String>, File)>,
}

impl TranscriptCache {
    /// Open (creating if needed) and load every existing record. Later
    /// records for the same key override earlier ones.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut map = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<TranscriptRecord>(&line) {
                    Ok(r) => {
                        map.insert((r.model, r.prompt_sha256, r.run), r.response);
                    }
                    Err(e) => log::warn!("{}:{}: skipping bad transcript line: {e}", path.display(), i + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(TranscriptCache {
            path,
            state: Mutex::new((map, file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("transcript lock poisoned").0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, model: &str, prompt: &str, run: u32) -> Option<String> {
        let key = (model.to_string(), prompt_sha256(prompt), run);
        self.state
            .lock()
            .expect("transcript lock poisoned")
            .0
            .get(&key)
            .cloned()
    }

    pub fn append(&self, model: &str, prompt: &str, run: u32, response: &str) -> std::io::Result<()> {
        let record = TranscriptRecord {
            model: model.to_string(),
            prompt_sha256: prompt_sha256(prompt),
            run,
            response: response.to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        let mut guard = self.state.lock().expect("transcript lock poisoned");
        writeln!(guard.1, "{line}")?;
        guard.1.flush()?;
        guard
            .0
            .insert((record.model, record.prompt_sha256, record.run), record.response);
        Ok(())
    }
}

/// Wraps a backend with transcript replay: cached responses are returned
/// without calling the inner backend; fresh responses are appended.
pub struct CachedBackend<B> {
    inner: Option<B>,
    model: String,
    cache: Arc<TranscriptCache>,
}

impl<B: CompletionBackend> CachedBackend<B> {
    pub fn new(inner: B, cache: Arc<TranscriptCache>) -> Self {
        let model = inner.model_name().to_string();
        CachedBackend {
            inner: Some(inner),
            model,
            cache,
        }
    }
}

impl CachedBackend<StubBackend> {
    /// Answer only from the transcript; misses are reported as missing.
    pub fn replay_only(model: impl Into<String>, cache: Arc<TranscriptCache>) -> Self {
        CachedBackend {
            inner: None,
            model: model.into(),
            cache,
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for CachedBackend<B> {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        if let Some(hit) = self.cache.lookup(&self.model, request.prompt, request.run) {
            return Ok(hit);
        }
        let inner = self
            .inner
            .as_ref()
            .ok_or_else(|| BackendError::NoAnswer("transcript miss in replay mode".into()))?;
        let response = inner.complete(request)?;
        if let Err(e) = self.cache.append(&self.model, request.prompt, request.run, &response) {
            log::warn!("could not append to transcript {}: {e}", self.cache.path().display());
        }
        Ok(response)
    }
}
