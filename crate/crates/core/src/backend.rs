//! Chat-completion abstraction: a live HTTP client speaking the common
//! chat-completion JSON convention, and a deterministic scripted backend for
//! tests. The engine never distinguishes the two.
//!
//! The wire contract of the live client is documented in `BACKEND.md` at the
//! repository root.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::SamplingParams;
use crate::protocol::PromptMessages;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend exhausted after {attempts} attempts: {last_error}")]
    Exhausted { attempts: u32, last_error: String },
    #[error("backend refused request with status {status}: {body}")]
    Refused { status: u16, body: String },
    #[error("scripted backend out of replies after {consumed}")]
    ScriptExhausted { consumed: usize },
    #[error("backend returned an unusable response: {0}")]
    InvalidResponse(String),
}

/// A policy that turns a rendered prompt into one assistant completion.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &PromptMessages,
        sampling: &SamplingParams,
    ) -> Result<String, BackendError>;
}

/// Connection settings for the live client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key; unset or empty
    /// means no Authorization header.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(rename = "request_timeout_ms", with = "crate::util::duration_ms")]
    pub request_timeout: Duration,
    pub max_retries: u32,
    /// Base delay for exponential backoff between retries.
    #[serde(default = "default_retry_base_ms")]
    pub retry_base_delay_ms: u64,
}

fn default_retry_base_ms() -> u64 {
    250
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "http://localhost:8000/v1/chat/completions".into(),
            model_name: "research-agent".into(),
            api_key_env: String::new(),
            request_timeout: Duration::from_secs(120),
            max_retries: 2,
            retry_base_delay_ms: default_retry_base_ms(),
        }
    }
}

const MAX_RETRIES_CEILING: u32 = 5;

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.request_timeout.is_zero() {
            return Err("request_timeout must be positive".into());
        }
        if self.max_retries > MAX_RETRIES_CEILING {
            return Err(format!("max_retries must be <= {MAX_RETRIES_CEILING}"));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    seed: u64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

/// Live chat-completion client. Safe for concurrent use; each call is an
/// independent idempotent request, retried on transport failures and 5xx
/// with exponential backoff up to `max_retries`.
pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        config.validate().map_err(BackendError::InvalidResponse)?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.request_timeout)
            .build()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn api_key(&self) -> Option<String> {
        if self.config.api_key_env.is_empty() {
            return None;
        }
        std::env::var(&self.config.api_key_env).ok()
    }

    fn send_once(
        &self,
        messages: &PromptMessages,
        sampling: &SamplingParams,
    ) -> Result<String, SendFailure> {
        let body = CompletionRequest {
            model: &self.config.model_name,
            messages: messages
                .messages()
                .iter()
                .map(|m| WireMessage { role: role_str(m.role), content: &m.content })
                .collect(),
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            seed: sampling.seed,
        };
        let mut request = self.client.post(&self.config.endpoint_url).json(&body);
        if let Some(key) = self.api_key() {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| SendFailure::Transient(e.to_string()))?;
        let status = response.status();
        if status.is_client_error() {
            let body = response.text().unwrap_or_default();
            return Err(SendFailure::Refused { status: status.as_u16(), body });
        }
        if !status.is_success() {
            return Err(SendFailure::Transient(format!("status {status}")));
        }
        let parsed: CompletionResponse = response
            .json()
            .map_err(|e| SendFailure::Transient(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| SendFailure::Transient("empty choices".into()))?;
        Ok(choice.message.content)
    }
}

enum SendFailure {
    Transient(String),
    Refused { status: u16, body: String },
}

fn role_str(role: crate::protocol::Role) -> &'static str {
    match role {
        crate::protocol::Role::System => "system",
        crate::protocol::Role::User => "user",
        crate::protocol::Role::Assistant => "assistant",
    }
}

impl ChatBackend for HttpBackend {
    fn complete(
        &self,
        messages: &PromptMessages,
        sampling: &SamplingParams,
    ) -> Result<String, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.retry_base_delay_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.send_once(messages, sampling) {
                Ok(text) => return Ok(text),
                Err(SendFailure::Refused { status, body }) => {
                    return Err(BackendError::Refused { status, body });
                }
                Err(SendFailure::Transient(detail)) => {
                    tracing::warn!(attempt, %detail, "backend request failed");
                    last_error = detail;
                }
            }
        }
        Err(BackendError::Exhausted { attempts, last_error })
    }
}

/// Deterministic test double: hands out a fixed reply sequence, strictly in
/// order. Single-consumer by design; parallel runs use one instance per
/// trajectory.
pub struct ScriptedBackend {
    replies: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        Self { replies, cursor: Mutex::new(0) }
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        _messages: &PromptMessages,
        _sampling: &SamplingParams,
    ) -> Result<String, BackendError> {
        let mut cursor = self.cursor.lock().unwrap();
        if *cursor >= self.replies.len() {
            return Err(BackendError::ScriptExhausted { consumed: *cursor });
        }
        let reply = self.replies[*cursor].clone();
        *cursor += 1;
        Ok(reply)
    }
}
