//! Prompt-based stance classification of evidence sentences.
//!
//! Each sentence is rendered into the fixed prompt, sent to a [`Backend`],
//! and the completion parsed into a [`Label`]. Transport faults and
//! unparseable completions consume retries; a sentence that never yields a
//! label is recorded as [`Outcome::Failed`] rather than aborting the batch.

mod backend;
mod cache;
mod parse;
mod prompt;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use backend::{
    Backend, BackendError, LiveBackend, ReplayBackend, ScriptedBackend, ScriptedResponse,
    API_BASE_ENV, API_KEY_ENV, DEFAULT_API_BASE,
};
pub use cache::{CacheEntry, CacheError, CompletionCache};
pub use parse::{parse_response, ParseError};
pub use prompt::{
    prompt_hash, render_prompt, sentence_from_prompt, PromptError, ARROW, TEMPLATE,
    TEMPLATE_VERSION,
};

use crate::evidence::EvidenceSentence;
use crate::Label;

pub const DEFAULT_MODEL_ID: &str = "gpt-4-0613";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            model_id: DEFAULT_MODEL_ID.to_string(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamsError {
    #[error("temperature must be finite and >= 0, got {0}")]
    Temperature(f64),
    #[error("max_tokens must be >= 16, got {0}")]
    MaxTokens(u32),
    #[error("model_id must not be empty")]
    ModelId,
}

impl DecodingParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.model_id.is_empty() {
            return Err(ParamsError::ModelId);
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ParamsError::Temperature(self.temperature));
        }
        if self.max_tokens < 16 {
            return Err(ParamsError::MaxTokens(self.max_tokens));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Outcome {
    Labeled { label: Label },
    Failed { reason: String },
}

impl Outcome {
    pub fn label(&self) -> Option<Label> {
        match self {
            Outcome::Labeled { label } => Some(*label),
            Outcome::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationRecord {
    pub sentence_id: String,
    pub model_id: String,
    pub prompt_hash: String,
    pub raw_response: String,
    pub reasoning: String,
    pub outcome: Outcome,
    pub attempts: u32,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("concurrency_limit must be >= 1")]
    ZeroConcurrency,
    #[error(transparent)]
    CacheWrite(#[from] CacheError),
}

/// Classifies one sentence without a cache. Never fails: exhausted retries
/// produce an [`Outcome::Failed`] record.
pub fn classify_sentence(
    sentence: &EvidenceSentence,
    backend: &dyn Backend,
    params: &DecodingParams,
    retry_limit: u32,
) -> ClassificationRecord {
    classify_cached(sentence, backend, params, retry_limit, None)
        .expect("no cache writes without a cache")
}

fn classify_cached(
    sentence: &EvidenceSentence,
    backend: &dyn Backend,
    params: &DecodingParams,
    retry_limit: u32,
    cache: Option<&CompletionCache>,
) -> Result<ClassificationRecord, CacheError> {
    let sentence_id = sentence.id();
    let record = |raw: String, reasoning: String, outcome: Outcome, attempts: u32, hash: String| {
        ClassificationRecord {
            sentence_id: sentence_id.clone(),
            model_id: params.model_id.clone(),
            prompt_hash: hash,
            raw_response: raw,
            reasoning,
            outcome,
            attempts,
            timestamp: Utc::now(),
        }
    };

    let prompt = match render_prompt(&sentence.sentence.text) {
        Ok(p) => p,
        Err(e) => {
            let hash = prompt_hash(&params.model_id, "");
            let failed = Outcome::Failed {
                reason: e.to_string(),
            };
            return Ok(record(String::new(), String::new(), failed, 1, hash));
        }
    };
    let hash = prompt_hash(&params.model_id, &prompt);

    let mut last_raw = String::new();
    let mut last_reason = String::new();
    for attempt in 1..=retry_limit.saturating_add(1) {
        let cached = if attempt == 1 {
            cache.and_then(|c| c.get(&hash, &params.model_id))
        } else {
            None
        };
        let raw = match cached {
            Some(raw) => raw,
            None => {
                if attempt > 1 {
                    let delay = backend.retry_delay(attempt - 1);
                    if !delay.is_zero() {
                        thread::sleep(delay);
                    }
                }
                match backend.complete(&prompt, params) {
                    Ok(raw) => {
                        if let Some(c) = cache {
                            c.put(CacheEntry {
                                prompt_hash: hash.clone(),
                                model_id: params.model_id.clone(),
                                raw_response: raw.clone(),
                                created_at: Utc::now(),
                            })?;
                        }
                        raw
                    }
                    Err(e) => {
                        last_reason = e.to_string();
                        if e.is_retryable() {
                            continue;
                        }
                        let failed = Outcome::Failed {
                            reason: last_reason,
                        };
                        return Ok(record(last_raw, String::new(), failed, attempt, hash));
                    }
                }
            }
        };
        match parse_response(&raw) {
            Ok((reasoning, label)) => {
                return Ok(record(
                    raw,
                    reasoning,
                    Outcome::Labeled { label },
                    attempt,
                    hash,
                ));
            }
            Err(e) => {
                last_reason = e.to_string();
                last_raw = raw;
            }
        }
    }
    let failed = Outcome::Failed {
        reason: last_reason,
    };
    Ok(record(
        last_raw,
        String::new(),
        failed,
        retry_limit.saturating_add(1),
        hash,
    ))
}

/// Classifies every sentence, returning records in input order.
///
/// The cache is consulted before the backend and every fresh completion is
/// appended to it before its record exists. At most `concurrency_limit`
/// completions run at once. A cache write failure stops the batch.
pub fn classify_corpus(
    sentences: &[EvidenceSentence],
    backend: &dyn Backend,
    params: &DecodingParams,
    cache: &CompletionCache,
    concurrency_limit: usize,
    retry_limit: u32,
) -> Result<Vec<ClassificationRecord>, ClassifyError> {
    if concurrency_limit == 0 {
        return Err(ClassifyError::ZeroConcurrency);
    }
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<CacheError>> = Mutex::new(None);
    let slots: Mutex<Vec<Option<ClassificationRecord>>> = Mutex::new(vec![None; sentences.len()]);

    let workers = concurrency_limit.min(sentences.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sentence) = sentences.get(i) else {
                    break;
                };
                match classify_cached(sentence, backend, params, retry_limit, Some(cache)) {
                    Ok(rec) => slots.lock().unwrap()[i] = Some(rec),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        failure.lock().unwrap().get_or_insert(e);
                        break;
                    }
                }
            });
        }
    });

    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e.into());
    }
    Ok(slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect())
}
