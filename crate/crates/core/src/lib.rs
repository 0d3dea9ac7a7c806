//! Policy-document stance analysis.
//!
//! The pipeline runs in stages, each a separate module:
//!
//! - [`corpus`]: manifest loading, canonical plain text, witness-only transcripts
//! - [`segmenter`]: rule-based sentence boundaries with character offsets
//! - [`evidence`]: dual-lexicon filtering for ENDS evidence sentences
//! - [`classifier`]: prompt rendering, completion backends, response parsing, cache
//! - [`annotation`]: sampling, annotator sessions, Cohen's kappa
//! - [`stats`]: confusion matrices, classification metrics, Pearson chi-square
//! - [`report`]: per-corpus/country breakdown tables

pub mod annotation;
pub mod classifier;
pub mod corpus;
pub mod evidence;
pub mod jsonl;
mod label;
pub mod report;
pub mod segmenter;
pub mod stats;

pub use label::{Label, ParseLabelError};
