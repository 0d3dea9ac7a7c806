//! Completion backends.
//!
//! - [`LiveBackend`]: OpenAI-compatible `/chat/completions` over HTTP
//! - [`ReplayBackend`]: answers only from the completion cache
//! - [`ScriptedBackend`]: answers from a fixture keyed by sentence text

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::cache::CompletionCache;
use super::prompt::{prompt_hash, sentence_from_prompt};
use super::DecodingParams;
use crate::jsonl;

pub const API_BASE_ENV: &str = "STANCELAB_API_BASE";
pub const API_KEY_ENV: &str = "STANCELAB_API_KEY";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("cache miss")]
    CacheMiss,
    #[error("no scripted response for sentence")]
    NoScript,
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Transient failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError>;

    /// Pause before retry number `retry` (1-based).
    fn retry_delay(&self, _retry: u32) -> Duration {
        Duration::ZERO
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }

    fn retry_delay(&self, retry: u32) -> Duration {
        (**self).retry_delay(retry)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }

    fn retry_delay(&self, retry: u32) -> Duration {
        (**self).retry_delay(retry)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub sentence_text: String,
    pub response_text: String,
}

/// Deterministic backend for fixtures and tests.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(responses: impl IntoIterator<Item = ScriptedResponse>) -> Self {
        Self {
            responses: responses
                .into_iter()
                .map(|r| (r.sentence_text, r.response_text))
                .collect(),
        }
    }

    /// Loads a JSON-lines fixture of `{sentence_text, response_text}`.
    pub fn from_file(path: &Path) -> Result<Self, jsonl::JsonlError> {
        Ok(Self::new(jsonl::read::<ScriptedResponse>(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &str, _params: &DecodingParams) -> Result<String, BackendError> {
        let sentence = sentence_from_prompt(prompt).unwrap_or(prompt);
        self.responses
            .get(sentence)
            .cloned()
            .ok_or(BackendError::NoScript)
    }
}

/// Cache-only backend: every answer must already be in the cache.
pub struct ReplayBackend {
    cache: Arc<CompletionCache>,
}

impl ReplayBackend {
    pub fn new(cache: Arc<CompletionCache>) -> Self {
        Self { cache }
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError> {
        self.cache
            .get(&prompt_hash(&params.model_id, prompt), &params.model_id)
            .ok_or(BackendError::CacheMiss)
    }
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct LiveBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    backoff_base: Duration,
}

impl LiveBackend {
    pub fn new(api_base: &str, api_key: impl Into<String>) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", api_base.trim_end_matches('/')),
            api_key: api_key.into(),
            backoff_base: Duration::from_secs(1),
        })
    }

    /// Reads the endpoint and key from `STANCELAB_API_BASE` / `STANCELAB_API_KEY`.
    pub fn from_env() -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| BackendError::Config(format!("{API_KEY_ENV} is not set")))?;
        let base = std::env::var(API_BASE_ENV).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Self::new(&base, key)
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn request_body(prompt: &str, params: &DecodingParams) -> serde_json::Value {
        json!({
            "model": params.model_id,
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "messages": [{ "role": "user", "content": prompt }],
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl Backend for LiveBackend {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, BackendError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&Self::request_body(prompt, params))
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|e| BackendError::Transport(format!("unexpected response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Transport("response has no message content".into()))
    }

    /// `base · 2^(retry-1)` plus up to 25% jitter.
    fn retry_delay(&self, retry: u32) -> Duration {
        let exp = self.backoff_base * 2u32.saturating_pow(retry.saturating_sub(1));
        let jitter = rand::rng().random_range(0.0..0.25);
        exp.mul_f64(1.0 + jitter)
    }
}
