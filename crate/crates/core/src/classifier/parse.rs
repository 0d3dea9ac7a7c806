//! Parsing of `Reasoning: ... Answer: <label>` completions.

use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("malformed response: no \"Answer:\" marker")]
    MissingAnswer,
    #[error("malformed response: no label after the last \"Answer:\" marker")]
    MissingLabel,
}

const ANSWER: &str = "answer:";
const REASONING: &str = "reasoning:";

/// Byte offset of the last ASCII-case-insensitive occurrence of `needle`.
fn rfind_ci(haystack: &str, needle: &str) -> Option<usize> {
    haystack.to_ascii_lowercase().rfind(needle)
}

/// Extracts `(reasoning, label)` from a raw completion.
///
/// The label is the first whitespace-separated token after the last
/// `Answer:` that equals a label once surrounding punctuation and quotes are
/// stripped. The reasoning is whatever lies between the last preceding
/// `Reasoning:` and that `Answer:`, trimmed; empty without a marker.
pub fn parse_response(raw: &str) -> Result<(String, Label), ParseError> {
    let answer_at = rfind_ci(raw, ANSWER).ok_or(ParseError::MissingAnswer)?;
    let after = &raw[answer_at + ANSWER.len()..];
    let label = after
        .split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| !c.is_alphanumeric()))
        .find_map(|tok| tok.parse::<Label>().ok())
        .ok_or(ParseError::MissingLabel)?;

    let before = &raw[..answer_at];
    let reasoning = rfind_ci(before, REASONING)
        .map(|at| before[at + REASONING.len()..].trim().to_string())
        .unwrap_or_default();
    Ok((reasoning, label))
}
