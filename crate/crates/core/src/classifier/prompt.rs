//! The classification prompt: fixed instructions with one sentence slot.

use sha2::{Digest, Sha256};

pub const TEMPLATE_VERSION: &str = "stance-v1";

/// Template text; `[INPUT SENTENCE]` occurs exactly once, at the very end.
pub const TEMPLATE: &str = include_str!("../../assets/prompt_template_v1.txt");

pub const SLOT: &str = "[INPUT SENTENCE]";

/// Marker introducing the sentence in a rendered prompt.
pub const ARROW: &str = "This is the sentence: --> ";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("cannot render a prompt for an empty sentence")]
    EmptySentence,
}

fn template_parts() -> (&'static str, &'static str) {
    TEMPLATE
        .split_once(SLOT)
        .expect("template contains the input slot")
}

pub fn render_prompt(sentence_text: &str) -> Result<String, PromptError> {
    if sentence_text.trim().is_empty() {
        return Err(PromptError::EmptySentence);
    }
    let (head, tail) = template_parts();
    let mut out = String::with_capacity(head.len() + sentence_text.len() + tail.len());
    out.push_str(head);
    out.push_str(sentence_text);
    out.push_str(tail);
    Ok(out)
}

/// Inverse of [`render_prompt`]; `None` if `prompt` was not rendered from
/// this template.
pub fn sentence_from_prompt(prompt: &str) -> Option<&str> {
    let (head, tail) = template_parts();
    prompt.strip_prefix(head)?.strip_suffix(tail)
}

/// SHA-256 over `model_id`, a NUL separator and the prompt, as lowercase hex.
pub fn prompt_hash(model_id: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}
