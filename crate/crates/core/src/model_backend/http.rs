use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, BackendKind};

/// Environment variable holding a bearer token for HTTP backends.
pub const API_KEY_ENV: &str = "TOKSHAP_API_KEY";

const INITIAL_BACKOFF_MS: u64 = 250;
const BODY_EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, Copy)]
enum Wire {
    OpenAi,
    Ollama,
}

/// Blocking client for OpenAI-compatible chat completions and Ollama's
/// generate endpoint.
pub struct HttpBackend {
    agent: ureq::Agent,
    wire: Wire,
    url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    max_retries: u32,
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let wire = match config.kind {
            BackendKind::OpenAiCompatible => Wire::OpenAi,
            BackendKind::Ollama => Wire::Ollama,
            BackendKind::Mock(_) => {
                return Err(BackendError::Config(
                    "mock backends are not served over HTTP".into(),
                ))
            }
        };
        let base = config
            .base_url
            .as_deref()
            .ok_or_else(|| BackendError::Config(format!("{} needs a base_url", config.kind)))?
            .trim_end_matches('/');
        let path = match wire {
            Wire::OpenAi => "/v1/chat/completions",
            Wire::Ollama => "/api/generate",
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = config
            .api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()));
        Ok(Self {
            agent,
            wire,
            url: format!("{base}{path}"),
            model: config.model_name.clone(),
            temperature: config.temperature,
            api_key,
            max_retries: config.max_retries,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn request_body(&self, prompt: &str) -> Value {
        match self.wire {
            Wire::OpenAi => json!({
                "model": self.model,
                "temperature": self.temperature,
                "messages": [{"role": "user", "content": prompt}],
            }),
            Wire::Ollama => json!({
                "model": self.model,
                "prompt": prompt,
                "stream": false,
                "options": {"temperature": self.temperature},
            }),
        }
    }

    fn attempt(&self, body: &str) -> Result<String, BackendError> {
        let mut request = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send(body)
            .map_err(|e| BackendError::Unreachable(format!("{}: {e}", self.url)))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Unreachable(format!("{}: reading body: {e}", self.url)))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Rejected {
                status,
                body: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            });
        }
        parse_response(self.wire, &text)
    }
}

fn parse_response(wire: Wire, body: &str) -> Result<String, BackendError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| BackendError::Malformed(format!("not JSON ({e})")))?;
    let text = match wire {
        Wire::OpenAi => value.pointer("/choices/0/message/content"),
        Wire::Ollama => value.get("response"),
    };
    match text {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Null) if matches!(wire, Wire::OpenAi) => Ok(String::new()),
        _ => Err(BackendError::Malformed(match wire {
            Wire::OpenAi => "missing choices[0].message.content".to_string(),
            Wire::Ollama => "missing \"response\" string".to_string(),
        })),
    }
}

fn retryable(e: &BackendError) -> bool {
    match e {
        BackendError::Unreachable(_) => true,
        BackendError::Rejected { status, .. } => *status == 429 || *status >= 500,
        _ => false,
    }
}

impl Backend for HttpBackend {
    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        let body = self.request_body(prompt).to_string();
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if retryable(&e) && attempt < self.max_retries => {
                    let wait = INITIAL_BACKOFF_MS << attempt;
                    log::debug!("retrying {} in {wait} ms after: {e}", self.url);
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
