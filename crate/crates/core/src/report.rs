//! Per-corpus, per-country label breakdown with expected values and the
//! country × stance chi-square test.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classifier::ClassificationRecord;
use crate::corpus::{CorpusKind, Country, DocumentMeta};
use crate::stats::{self, ChiSquareResult, ContingencyTable2x2};
use crate::Label;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("record {sentence_id} does not resolve to a known document")]
    UnresolvedSentence { sentence_id: String },
    #[error("malformed breakdown csv: {0}")]
    Csv(String),
}

/// A corpus kind, or the per-country total across all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RowCorpus {
    Kind(CorpusKind),
    Total,
}

impl RowCorpus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowCorpus::Kind(k) => k.as_str(),
            RowCorpus::Total => "TOTAL",
        }
    }
}

impl fmt::Display for RowCorpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RowCorpus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "TOTAL" {
            return Ok(RowCorpus::Total);
        }
        s.parse().map(RowCorpus::Kind).map_err(|e| e.to_string())
    }
}

impl From<RowCorpus> for String {
    fn from(c: RowCorpus) -> String {
        c.as_str().to_string()
    }
}

impl TryFrom<String> for RowCorpus {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub corpus: RowCorpus,
    pub country: Country,
    pub n_evidence: u64,
    pub n_helpful: u64,
    /// `None` when every record in the row failed.
    pub pct_helpful: Option<u64>,
    pub n_harmful: u64,
    pub pct_harmful: Option<u64>,
    pub n_neither: u64,
    pub n_failed: u64,
}

impl BreakdownRow {
    fn empty(corpus: RowCorpus, country: Country) -> Self {
        Self {
            corpus,
            country,
            n_evidence: 0,
            n_helpful: 0,
            pct_helpful: None,
            n_harmful: 0,
            pct_harmful: None,
            n_neither: 0,
            n_failed: 0,
        }
    }

    fn add(&mut self, label: Option<Label>) {
        self.n_evidence += 1;
        match label {
            Some(Label::Helpful) => self.n_helpful += 1,
            Some(Label::Harmful) => self.n_harmful += 1,
            Some(Label::Neither) => self.n_neither += 1,
            None => self.n_failed += 1,
        }
    }

    fn absorb(&mut self, other: &BreakdownRow) {
        self.n_evidence += other.n_evidence;
        self.n_helpful += other.n_helpful;
        self.n_harmful += other.n_harmful;
        self.n_neither += other.n_neither;
        self.n_failed += other.n_failed;
    }

    fn finish(&mut self) {
        let labeled = self.n_evidence - self.n_failed;
        if labeled > 0 {
            self.pct_helpful = Some(format_percent(self.n_helpful, labeled));
            self.pct_harmful = Some(format_percent(self.n_harmful, labeled));
        } else {
            self.pct_helpful = None;
            self.pct_harmful = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// Corpus rows in [`CorpusKind::ALL`] order, AU before UK, then the two
    /// total rows.
    pub rows: Vec<BreakdownRow>,
    /// Helpful/harmful counts from the total rows; AU is row 0.
    pub observed: ContingencyTable2x2,
    /// Rounded half-up; `None` when a margin of the table is zero.
    pub expected: Option<[[u64; 2]; 2]>,
    pub expected_exact: Option<[[f64; 2]; 2]>,
    pub chi_square: Option<ChiSquareResult>,
}

impl Breakdown {
    pub fn row(&self, corpus: RowCorpus, country: Country) -> Option<&BreakdownRow> {
        self.rows
            .iter()
            .find(|r| r.corpus == corpus && r.country == country)
    }

    pub fn total(&self, country: Country) -> &BreakdownRow {
        self.row(RowCorpus::Total, country)
            .expect("breakdown always has total rows")
    }
}

/// `round(100 · num / den)` with halves rounded up, in integer arithmetic.
pub fn format_percent(num: u64, den: u64) -> u64 {
    assert!(den > 0, "percentage of an empty denominator");
    (200 * num + den) / (2 * den)
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

pub fn aggregate(
    records: &[ClassificationRecord],
    metas: &[DocumentMeta],
    sentence_index: &HashMap<String, String>,
) -> Result<Breakdown, ReportError> {
    let docs: HashMap<&str, &DocumentMeta> = metas.iter().map(|m| (m.id.as_str(), m)).collect();
    let mut cells: HashMap<(CorpusKind, Country), BreakdownRow> = HashMap::new();
    for rec in records {
        let meta = sentence_index
            .get(&rec.sentence_id)
            .and_then(|doc_id| docs.get(doc_id.as_str()))
            .ok_or_else(|| ReportError::UnresolvedSentence {
                sentence_id: rec.sentence_id.clone(),
            })?;
        cells
            .entry((meta.corpus_kind, meta.country))
            .or_insert_with(|| BreakdownRow::empty(RowCorpus::Kind(meta.corpus_kind), meta.country))
            .add(rec.outcome.label());
    }

    let mut rows = Vec::with_capacity(CorpusKind::ALL.len() * 2 + 2);
    for &kind in CorpusKind::ALL {
        for &country in Country::ALL {
            rows.push(
                cells
                    .remove(&(kind, country))
                    .unwrap_or_else(|| BreakdownRow::empty(RowCorpus::Kind(kind), country)),
            );
        }
    }
    for &country in Country::ALL {
        let mut total = BreakdownRow::empty(RowCorpus::Total, country);
        for r in rows.iter().filter(|r| r.country == country) {
            total.absorb(r);
        }
        rows.push(total);
    }
    for r in &mut rows {
        r.finish();
    }

    let mut observed = ContingencyTable2x2::default();
    for (i, &country) in stats::CONTINGENCY_ROWS.iter().enumerate() {
        let t = rows
            .iter()
            .find(|r| r.corpus == RowCorpus::Total && r.country == country)
            .expect("total row");
        observed.observed[i] = [t.n_helpful, t.n_harmful];
    }
    let expected_exact = stats::expected_counts(&observed).ok();
    let expected = expected_exact.map(|e| e.map(|row| row.map(round_half_up)));
    let chi_square = stats::pearson_chi_square(&observed).ok();

    Ok(Breakdown {
        rows,
        observed,
        expected,
        expected_exact,
        chi_square,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Csv,
    Machine,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            "machine" | "json" => Ok(Format::Machine),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

pub const CSV_HEADER: [&str; 9] = [
    "corpus",
    "country",
    "n_evidence",
    "n_helpful",
    "pct_helpful",
    "n_harmful",
    "pct_harmful",
    "n_neither",
    "n_failed",
];

pub fn render(b: &Breakdown, fmt: Format) -> Vec<u8> {
    match fmt {
        Format::Text => render_text(b).into_bytes(),
        Format::Csv => render_csv(b),
        Format::Machine => {
            let mut out = serde_json::to_vec_pretty(b).expect("breakdown serializes");
            out.push(b'\n');
            out
        }
    }
}

fn opt_str(v: Option<u64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn render_csv(b: &Breakdown) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in &b.rows {
        w.write_record([
            r.corpus.as_str().to_string(),
            r.country.as_str().to_string(),
            r.n_evidence.to_string(),
            r.n_helpful.to_string(),
            opt_str(r.pct_helpful),
            r.n_harmful.to_string(),
            opt_str(r.pct_harmful),
            r.n_neither.to_string(),
            r.n_failed.to_string(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Reads back rows written by [`render`] in CSV form.
pub fn parse_csv(bytes: &[u8]) -> Result<Vec<BreakdownRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().map_err(|e| ReportError::Csv(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(ReportError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ReportError::Csv(e.to_string()))?;
        let int = |i: usize| -> Result<u64, ReportError> {
            rec[i].parse().map_err(|_| {
                ReportError::Csv(format!("bad integer {:?} in {}", &rec[i], CSV_HEADER[i]))
            })
        };
        let opt = |i: usize| -> Result<Option<u64>, ReportError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                int(i).map(Some)
            }
        };
        rows.push(BreakdownRow {
            corpus: rec[0].parse().map_err(ReportError::Csv)?,
            country: rec[1]
                .parse()
                .map_err(|e: crate::corpus::CorpusError| ReportError::Csv(e.to_string()))?,
            n_evidence: int(2)?,
            n_helpful: int(3)?,
            pct_helpful: opt(4)?,
            n_harmful: int(5)?,
            pct_harmful: opt(6)?,
            n_neither: int(7)?,
            n_failed: int(8)?,
        });
    }
    Ok(rows)
}

fn corpus_title(c: RowCorpus) -> &'static str {
    match c {
        RowCorpus::Kind(CorpusKind::Erku) => "Erku corpus",
        RowCorpus::Kind(CorpusKind::InquirySubmission) => "ID corpus",
        RowCorpus::Kind(CorpusKind::InquiryTranscript) => "IT corpus",
        RowCorpus::Total => "Total observed",
    }
}

fn count_pct(n: u64, pct: Option<u64>) -> String {
    match pct {
        Some(p) => format!("{n} ({p}%)"),
        None => format!("{n} (-)"),
    }
}

fn render_text(b: &Breakdown) -> String {
    let mut lines: Vec<[String; 7]> = vec![[
        "Corpus".into(),
        "Country".into(),
        "Ev. sent.".into(),
        "Helpful".into(),
        "Harmful".into(),
        "Neither".into(),
        "Failed".into(),
    ]];
    let mut prev = None;
    for r in &b.rows {
        let title = if prev == Some(r.corpus) {
            String::new()
        } else {
            corpus_title(r.corpus).to_string()
        };
        prev = Some(r.corpus);
        lines.push([
            title,
            r.country.to_string(),
            r.n_evidence.to_string(),
            count_pct(r.n_helpful, r.pct_helpful),
            count_pct(r.n_harmful, r.pct_harmful),
            r.n_neither.to_string(),
            r.n_failed.to_string(),
        ]);
    }
    for (i, country) in stats::CONTINGENCY_ROWS.iter().enumerate() {
        let (h, m) = match b.expected {
            Some(e) => (e[i][0].to_string(), e[i][1].to_string()),
            None => ("-".into(), "-".into()),
        };
        lines.push([
            if i == 0 {
                "Expected values".into()
            } else {
                String::new()
            },
            country.to_string(),
            "-".into(),
            h,
            m,
            "-".into(),
            "-".into(),
        ]);
    }

    let mut widths = [0usize; 7];
    for l in &lines {
        for (w, cell) in widths.iter_mut().zip(l) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for l in &lines {
        let mut line = String::new();
        for (i, cell) in l.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i < 2 {
                let _ = write!(line, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(line, "{cell:>w$}", w = widths[i]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    match &b.chi_square {
        Some(c) => {
            let _ = writeln!(
                out,
                "\nChi-square (helpful/harmful x country): {:.4}, df = {}, p = {:.3e}{}",
                c.statistic,
                c.df,
                c.p_value,
                if c.low_expected_count {
                    " (expected count below 5)"
                } else {
                    ""
                }
            );
        }
        None => out.push_str("\nChi-square (helpful/harmful x country): undefined\n"),
    }
    out
}
