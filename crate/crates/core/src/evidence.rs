//! Evidence-sentence filtering by two keyword lexicons.
//!
//! A sentence is kept when it mentions both an ENDS term and an evidence
//! term. Phrases match at word boundaries: the characters on either side of
//! a match must not be ASCII alphanumerics (hyphens inside a phrase belong to
//! the phrase). `Fold` entries match case-insensitively, `Exact` entries
//! case-sensitively.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::segmenter::Sentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseMode {
    Fold,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub phrase: String,
    pub case_mode: CaseMode,
}

#[derive(Debug, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon {0:?} has no entries")]
    Empty(String),
    #[error("lexicon {name:?}: invalid phrase {phrase:?}")]
    InvalidPhrase { name: String, phrase: String },
    #[error("lexicon {name:?} line {line}: unknown case mode {mode:?}")]
    BadMode {
        name: String,
        line: usize,
        mode: String,
    },
    #[error("reading lexicon: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    name: String,
    entries: Vec<LexiconEntry>,
}

const DEFAULT_ENDS_FOLD: &[&str] = &[
    "e-cig",
    "e-cigs",
    "ecig",
    "ecigs",
    "e cig",
    "e cigs",
    "e-cigarette",
    "e-cigarettes",
    "electronic cigarette",
    "electronic cigarettes",
    "e-pen",
    "e-pens",
    "vape",
    "vapes",
    "vaper",
    "vapers",
    "vaping",
    "vaporizer",
    "vaporizers",
    "vaporiser",
    "vaporisers",
];
const DEFAULT_ENDS_EXACT: &[&str] = &["EC", "ECs", "ENDS"];

const DEFAULT_EVIDENCE_FOLD: &[&str] = &[
    "evidence",
    "study",
    "studies",
    "research",
    "report",
    "reports",
    "finding",
    "findings",
    "analysis",
    "analyses",
    "literature",
    "data",
    "survey",
    "surveys",
];

impl Lexicon {
    pub fn new(name: impl Into<String>, entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        let name = name.into();
        if entries.is_empty() {
            return Err(LexiconError::Empty(name));
        }
        for e in &entries {
            if e.phrase.is_empty() || e.phrase.trim() != e.phrase {
                return Err(LexiconError::InvalidPhrase {
                    name,
                    phrase: e.phrase.clone(),
                });
            }
        }
        Ok(Self { name, entries })
    }

    pub fn default_ends() -> Self {
        let entries = DEFAULT_ENDS_FOLD
            .iter()
            .map(|p| (p, CaseMode::Fold))
            .chain(DEFAULT_ENDS_EXACT.iter().map(|p| (p, CaseMode::Exact)))
            .map(|(p, case_mode)| LexiconEntry {
                phrase: p.to_string(),
                case_mode,
            })
            .collect();
        Self::new("ends", entries).expect("default lexicon is valid")
    }

    pub fn default_evidence() -> Self {
        let entries = DEFAULT_EVIDENCE_FOLD
            .iter()
            .map(|p| LexiconEntry {
                phrase: p.to_string(),
                case_mode: CaseMode::Fold,
            })
            .collect();
        Self::new("evidence", entries).expect("default lexicon is valid")
    }

    /// Parses the override format: one phrase per line, optionally followed
    /// by `<TAB>exact`. Blank lines are skipped.
    pub fn parse(name: &str, text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (phrase, case_mode) = match line.split_once('\t') {
                Some((p, "exact")) => (p, CaseMode::Exact),
                Some((p, "fold")) => (p, CaseMode::Fold),
                Some((_, mode)) => {
                    return Err(LexiconError::BadMode {
                        name: name.to_string(),
                        line: i + 1,
                        mode: mode.to_string(),
                    })
                }
                None => (line, CaseMode::Fold),
            };
            entries.push(LexiconEntry {
                phrase: phrase.to_string(),
                case_mode,
            });
        }
        Self::new(name, entries)
    }

    pub fn from_file(name: &str, path: &Path) -> Result<Self, LexiconError> {
        Self::parse(name, &fs::read_to_string(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn with_entry(mut self, entry: LexiconEntry) -> Result<Self, LexiconError> {
        self.entries.push(entry);
        Self::new(self.name, self.entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMatch {
    pub phrase: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSentence {
    pub sentence: Sentence,
    pub ends_matches: Vec<TermMatch>,
    pub evidence_matches: Vec<TermMatch>,
}

impl EvidenceSentence {
    pub fn id(&self) -> String {
        self.sentence.id()
    }
}

fn chars_equal(a: char, b: char, mode: CaseMode) -> bool {
    match mode {
        CaseMode::Exact => a == b,
        CaseMode::Fold => a == b || a.to_lowercase().eq(b.to_lowercase()),
    }
}

fn is_word_char(c: Option<&char>) -> bool {
    c.is_some_and(|c| c.is_ascii_alphanumeric())
}

/// All occurrences of every lexicon phrase, sorted by (start, end).
/// Offsets are `char` positions within `text`.
pub fn find_matches(text: &str, lexicon: &Lexicon) -> Vec<TermMatch> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    for entry in &lexicon.entries {
        let phrase: Vec<char> = entry.phrase.chars().collect();
        if phrase.len() > chars.len() {
            continue;
        }
        for start in 0..=chars.len() - phrase.len() {
            let end = start + phrase.len();
            let hit = chars[start..end]
                .iter()
                .zip(&phrase)
                .all(|(&a, &b)| chars_equal(a, b, entry.case_mode));
            if hit
                && !(start > 0 && is_word_char(chars.get(start - 1)))
                && !is_word_char(chars.get(end))
            {
                out.push(TermMatch {
                    phrase: entry.phrase.clone(),
                    start,
                    end,
                });
            }
        }
    }
    out.sort_by(|a, b| (a.start, a.end, &a.phrase).cmp(&(b.start, b.end, &b.phrase)));
    out
}

pub fn is_evidence(
    sentence: &Sentence,
    ends_lex: &Lexicon,
    ev_lex: &Lexicon,
) -> Option<EvidenceSentence> {
    let ends_matches = find_matches(&sentence.text, ends_lex);
    if ends_matches.is_empty() {
        return None;
    }
    let evidence_matches = find_matches(&sentence.text, ev_lex);
    if evidence_matches.is_empty() {
        return None;
    }
    Some(EvidenceSentence {
        sentence: sentence.clone(),
        ends_matches,
        evidence_matches,
    })
}

/// Keeps the evidence sentences, preserving input order.
pub fn filter<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    ends_lex: &Lexicon,
    ev_lex: &Lexicon,
) -> Vec<EvidenceSentence> {
    sentences
        .into_iter()
        .filter_map(|s| is_evidence(s, ends_lex, ev_lex))
        .collect()
}
