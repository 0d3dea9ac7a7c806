//! Corpus manifests and canonical document text.
//!
//! A manifest is a UTF-8 CSV with header
//! `id,country,corpus_kind,org_name,org_category,source_path`. Each source is
//! either plain text or, for transcripts, the tab-separated turns format
//! (`role<TAB>speaker<TAB>utterance`, one turn per line); files whose name
//! ends in `.turns.tsv` are read as turns and reduced to the witness side.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const MANIFEST_HEADER: [&str; 6] = [
    "id",
    "country",
    "corpus_kind",
    "org_name",
    "org_category",
    "source_path",
];

/// File-name suffix marking a structured transcript source.
pub const TURNS_SUFFIX: &str = ".turns.tsv";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing file {path}: {source}")]
    MissingFile { path: PathBuf, source: io::Error },
    #[error("manifest {path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("invalid {field} value {value:?}")]
    InvalidEnum { field: &'static str, value: String },
    #[error("transcript line {line}: {message}")]
    BadTurn { line: usize, message: String },
    #[error("transcript has no witness turns")]
    EmptyResult,
    #[error("document {0:?} is empty after canonicalization")]
    EmptyDocument(String),
    #[error("writing manifest: {0}")]
    Write(#[from] csv::Error),
}

macro_rules! token_enum {
    ($name:ident, $field:literal, { $($variant:ident => $token:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $token)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $token),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = CorpusError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($token => Ok($name::$variant),)+
                    _ => Err(CorpusError::InvalidEnum { field: $field, value: s.to_string() }),
                }
            }
        }
    };
}

token_enum!(Country, "country", { Au => "AU", Uk => "UK" });

token_enum!(CorpusKind, "corpus_kind", {
    Erku => "ERKU",
    InquirySubmission => "INQUIRY_SUBMISSION",
    InquiryTranscript => "INQUIRY_TRANSCRIPT",
});

token_enum!(OrgCategory, "org_category", {
    Government => "government",
    Charity => "charity",
    ProfessionalBody => "professional_body",
    ResearchGroup => "research_group",
    Other => "other",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub id: String,
    pub country: Country,
    pub corpus_kind: CorpusKind,
    pub org_name: String,
    pub org_category: OrgCategory,
    /// As written in the manifest; relative paths resolve against the
    /// manifest's directory.
    pub source_path: PathBuf,
}

/// Canonical plain text of one policy document (LF line endings, non-empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub meta: DocumentMeta,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Witness,
    Questioner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub role: Role,
    pub speaker: String,
    pub utterance: String,
}

pub fn load_manifest(path: &Path) -> Result<Vec<DocumentMeta>, CorpusError> {
    let bytes = fs::read(path).map_err(|source| CorpusError::MissingFile {
        path: path.to_path_buf(),
        source,
    })?;
    parse_manifest(&bytes).map_err(|e| match e {
        CorpusError::Malformed { message, .. } => CorpusError::Malformed {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Vec<DocumentMeta>, CorpusError> {
    let malformed = |message: String| CorpusError::Malformed {
        path: PathBuf::new(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(malformed(format!(
            "expected header {}, found {}",
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut seen = HashSet::new();
    let mut metas = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| malformed(e.to_string()))?;
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        if row[5].is_empty() {
            return Err(malformed(format!("empty source_path for {id}")));
        }
        let meta = DocumentMeta {
            country: row[1].parse()?,
            corpus_kind: row[2].parse()?,
            org_name: row[3].to_string(),
            org_category: row[4].parse()?,
            source_path: PathBuf::from(&row[5]),
            id,
        };
        if !seen.insert(meta.id.clone()) {
            return Err(CorpusError::DuplicateId(meta.id));
        }
        metas.push(meta);
    }
    Ok(metas)
}

pub fn manifest_to_bytes(metas: &[DocumentMeta]) -> Result<Vec<u8>, CorpusError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER)?;
    for m in metas {
        w.write_record([
            m.id.as_str(),
            m.country.as_str(),
            m.corpus_kind.as_str(),
            m.org_name.as_str(),
            m.org_category.as_str(),
            &m.source_path.to_string_lossy(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| CorpusError::Write(e.into_error().into()))
}

pub fn write_manifest(path: &Path, metas: &[DocumentMeta]) -> Result<(), CorpusError> {
    let bytes = manifest_to_bytes(metas)?;
    fs::write(path, bytes).map_err(|source| CorpusError::MissingFile {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanonicalizeOptions {
    pub strip_references: bool,
    pub strip_footnote_markers: bool,
}

impl Default for CanonicalizeOptions {
    fn default() -> Self {
        Self {
            strip_references: true,
            strip_footnote_markers: true,
        }
    }
}

const REFERENCE_HEADINGS: [&str; 3] = ["references", "bibliography", "endnotes"];

static BRACKET_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[[0-9]+\]").unwrap());
static SUPERSCRIPT_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([^\s⁰¹²³⁴⁵⁶⁷⁸⁹])[⁰¹²³⁴⁵⁶⁷⁸⁹]+").unwrap());

/// Normalizes raw text into the canonical plain-text form.
///
/// Line endings become LF; footnote markers (`[n]`, superscript digits
/// attached to a preceding character) are removed; the trailing block that
/// starts at the last `References`/`Bibliography`/`Endnotes` heading line is
/// cut; runs of three or more blank lines collapse to a single blank line.
/// Nothing else changes: no case folding, no punctuation edits.
pub fn canonicalize(raw: &str, opts: CanonicalizeOptions) -> String {
    let mut text = raw.replace("\r\n", "\n").replace('\r', "\n");

    if opts.strip_footnote_markers {
        loop {
            let next = BRACKET_MARKER.replace_all(&text, "");
            let next = SUPERSCRIPT_MARKER.replace_all(&next, "$1").into_owned();
            if next == text {
                break;
            }
            text = next;
        }
    }

    if opts.strip_references {
        if let Some(cut) = last_reference_heading(&text) {
            text.truncate(cut);
            text.truncate(text.trim_end().len());
        }
    }

    collapse_blank_runs(&text)
}

/// Byte offset of the start of the last reference-heading line.
fn last_reference_heading(text: &str) -> Option<usize> {
    let mut offset = 0;
    let mut found = None;
    for line in text.split('\n') {
        let trimmed = line.trim();
        if REFERENCE_HEADINGS
            .iter()
            .any(|h| trimmed.eq_ignore_ascii_case(h))
        {
            found = Some(offset);
        }
        offset += line.len() + 1;
    }
    found
}

fn collapse_blank_runs(text: &str) -> String {
    let lines: Vec<&str> = text.split('\n').collect();
    let mut out: Vec<&str> = Vec::with_capacity(lines.len());
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            let run_end = lines[i..]
                .iter()
                .position(|l| !l.trim().is_empty())
                .map_or(lines.len(), |p| i + p);
            // A run touching the end of text is still bounded by the final
            // line, so every line in it counts as blank.
            if run_end - i >= 3 {
                out.push("");
            } else {
                out.extend_from_slice(&lines[i..run_end]);
            }
            i = run_end;
        } else {
            out.push(lines[i]);
            i += 1;
        }
    }
    out.join("\n")
}

/// Parses the tab-separated turns format. Blank lines are skipped.
pub fn parse_turns(text: &str) -> Result<Vec<TranscriptTurn>, CorpusError> {
    let mut turns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (role, speaker, utterance) = match (parts.next(), parts.next(), parts.next()) {
            (Some(r), Some(s), Some(u)) => (r, s, u),
            _ => {
                return Err(CorpusError::BadTurn {
                    line: i + 1,
                    message: "expected role<TAB>speaker<TAB>utterance".into(),
                })
            }
        };
        let role = match role.trim() {
            "witness" => Role::Witness,
            "questioner" => Role::Questioner,
            other => {
                return Err(CorpusError::BadTurn {
                    line: i + 1,
                    message: format!("unknown role {other:?}"),
                })
            }
        };
        if utterance.trim().is_empty() {
            return Err(CorpusError::BadTurn {
                line: i + 1,
                message: "empty utterance".into(),
            });
        }
        turns.push(TranscriptTurn {
            role,
            speaker: speaker.to_string(),
            utterance: utterance.to_string(),
        });
    }
    Ok(turns)
}

/// Joins witness utterances with LF, dropping every questioner turn.
pub fn extract_witness_text(turns: &[TranscriptTurn]) -> Result<String, CorpusError> {
    let witness: Vec<&str> = turns
        .iter()
        .filter(|t| t.role == Role::Witness)
        .map(|t| t.utterance.as_str())
        .collect();
    if witness.is_empty() {
        return Err(CorpusError::EmptyResult);
    }
    Ok(witness.join("\n"))
}

/// Reads and canonicalizes the source of `meta`, resolving relative paths
/// against `base_dir`.
pub fn load_document(
    meta: &DocumentMeta,
    base_dir: &Path,
    opts: CanonicalizeOptions,
) -> Result<Document, CorpusError> {
    let path = base_dir.join(&meta.source_path);
    let raw = fs::read_to_string(&path).map_err(|source| CorpusError::MissingFile {
        path: path.clone(),
        source,
    })?;
    let body = if path.to_string_lossy().ends_with(TURNS_SUFFIX) {
        extract_witness_text(&parse_turns(&raw)?)?
    } else {
        raw
    };
    let text = canonicalize(&body, opts);
    if text.trim().is_empty() {
        return Err(CorpusError::EmptyDocument(meta.id.clone()));
    }
    Ok(Document {
        meta: meta.clone(),
        text,
    })
}
