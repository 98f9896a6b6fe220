//! Getting a response string for a prompt: HTTP model servers or in-process
//! mocks, behind a persistent response cache.

mod cache;
mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use cache::{CacheStats, ResponseCache};
pub use http::{HttpBackend, API_KEY_ENV};
pub use mock::{FnBackend, MockBackend, MockSpec, RecordingBackend};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend rejected request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("invalid backend request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("response cache: {0}")]
    Cache(String),
}

/// Anything that maps a prompt to a response text.
pub trait Backend: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "String")]
pub enum BackendKind {
    OpenAiCompatible,
    Ollama,
    Mock(MockSpec),
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::OpenAiCompatible => f.write_str("openai-compatible"),
            BackendKind::Ollama => f.write_str("ollama"),
            BackendKind::Mock(spec) => write!(f, "mock:{spec}"),
        }
    }
}

impl From<BackendKind> for String {
    fn from(kind: BackendKind) -> String {
        kind.to_string()
    }
}

impl FromStr for BackendKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai" | "openai-compatible" => Ok(BackendKind::OpenAiCompatible),
            "ollama" => Ok(BackendKind::Ollama),
            _ => match s.strip_prefix("mock:") {
                Some(rest) => rest.parse().map(BackendKind::Mock),
                None => Err(BackendError::Config(format!(
                    "unknown backend kind {s:?} (expected openai-compatible, ollama or mock:<name>)"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_concurrency: usize,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            base_url: None,
            model_name: String::new(),
            temperature: 0.0,
            timeout_ms: 60_000,
            max_retries: 2,
            max_concurrency: 4,
            api_key: None,
        }
    }

    pub fn mock(spec: MockSpec) -> Self {
        Self::new(BackendKind::Mock(spec))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be >= 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(BackendError::Config("timeout_ms must be positive".into()));
        }
        if !matches!(self.kind, BackendKind::Mock(_)) && self.base_url.is_none() {
            return Err(BackendError::Config(format!("{} needs a base_url", self.kind)));
        }
        Ok(())
    }

    /// Short identifier recorded in results.
    pub fn id(&self) -> String {
        match &self.kind {
            BackendKind::Mock(_) => self.kind.to_string(),
            kind => format!(
                "{kind}:{}@{}",
                self.model_name,
                self.base_url.as_deref().unwrap_or("")
            ),
        }
    }

    /// Hex SHA-256 over everything that can change the response.
    pub fn cache_key(&self, prompt: &str) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for part in [
            self.kind.to_string().as_str(),
            self.base_url.as_deref().unwrap_or(""),
            self.model_name.as_str(),
            format!("{:?}", self.temperature).as_str(),
            prompt,
        ] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelResponse {
    pub prompt: String,
    pub text: String,
    pub from_cache: bool,
    pub latency_ms: u64,
}

/// A configured backend plus its cache.
pub struct Client {
    config: BackendConfig,
    backend: Arc<dyn Backend>,
    cache: ResponseCache,
    upstream_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client")
            .field("config", &self.config)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(config: BackendConfig, cache: ResponseCache) -> Result<Self, BackendError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match &config.kind {
            BackendKind::Mock(spec) => Arc::new(MockBackend::new(spec.clone())),
            _ => Arc::new(HttpBackend::new(&config)?),
        };
        Ok(Self::with_backend(config, backend, cache))
    }

    /// Uses `backend` for upstream calls while `config` still drives cache
    /// keys and concurrency.
    pub fn with_backend(config: BackendConfig, backend: Arc<dyn Backend>, cache: ResponseCache) -> Self {
        Self {
            config,
            backend,
            cache,
            upstream_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Calls that reached the backend (cache misses).
    pub fn upstream_calls(&self) -> usize {
        self.upstream_calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn complete(&self, prompt: &str) -> Result<ModelResponse, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        let key = self.config.cache_key(prompt);
        if let Some(text) = self.cache.load(&key)? {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(ModelResponse {
                prompt: prompt.to_string(),
                text,
                from_cache: true,
                latency_ms: 0,
            });
        }
        let started = Instant::now();
        self.upstream_calls.fetch_add(1, Ordering::Relaxed);
        let text = self.backend.generate(prompt)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        self.cache.store(&key, &self.config, prompt, &text)?;
        Ok(ModelResponse {
            prompt: prompt.to_string(),
            text,
            from_cache: false,
            latency_ms,
        })
    }

    /// Completes every prompt, up to `max_concurrency` at a time. Repeated
    /// prompts are requested once; later copies come back marked as cached.
    /// Results line up with `prompts`.
    pub fn complete_batch<S: AsRef<str> + Sync>(
        &self,
        prompts: &[S],
    ) -> Vec<Result<ModelResponse, BackendError>> {
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        let mut distinct: Vec<&str> = Vec::new();
        let slots: Vec<usize> = prompts
            .iter()
            .map(|p| {
                *first_seen.entry(p.as_ref()).or_insert_with(|| {
                    distinct.push(p.as_ref());
                    distinct.len() - 1
                })
            })
            .collect();

        let results = self.complete_distinct(&distinct);

        let mut handed_out = vec![false; distinct.len()];
        slots
            .into_iter()
            .map(|slot| {
                let mut result = results[slot].clone();
                if handed_out[slot] {
                    if let Ok(r) = result.as_mut() {
                        r.from_cache = true;
                        r.latency_ms = 0;
                    }
                } else {
                    handed_out[slot] = true;
                }
                result
            })
            .collect()
    }

    fn complete_distinct(&self, prompts: &[&str]) -> Vec<Result<ModelResponse, BackendError>> {
        let workers = self.config.max_concurrency.min(prompts.len());
        if workers <= 1 {
            return prompts.iter().map(|p| self.complete(p)).collect();
        }
        let next = AtomicUsize::new(0);
        let out: Mutex<Vec<Option<Result<ModelResponse, BackendError>>>> =
            Mutex::new(vec![None; prompts.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= prompts.len() {
                        break;
                    }
                    let result = self.complete(prompts[i]);
                    out.lock().expect("batch result lock poisoned")[i] = Some(result);
                });
            }
        });
        out.into_inner()
            .expect("batch result lock poisoned")
            .into_iter()
            .map(|r| r.expect("every batch slot is filled"))
            .collect()
    }
}
