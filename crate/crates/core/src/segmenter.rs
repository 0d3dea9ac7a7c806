//! Rule-based sentence boundary detection.
//!
//! A boundary is placed after a run of `.`, `!` or `?` (plus any closing
//! quotes or brackets) when whitespace follows and the next token starts
//! with an uppercase letter, a digit or an opening quote. A period does not
//! end a sentence when it closes a known abbreviation or a single-letter
//! initial; runs of two or more periods (and `…`) are ellipses and never
//! split. Blank lines always split, which also turns unpunctuated headings
//! into sentences of their own.
//!
//! Offsets are in `char`s of the canonical document text.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;

pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "et al.", "etc.", "vs.", "cf.", "Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "No.",
    "Fig.", "Eq.", "approx.", "Jan.", "Feb.", "Mar.", "Apr.", "Jun.", "Jul.", "Aug.", "Sep.",
    "Sept.", "Oct.", "Nov.", "Dec.",
];

const CLOSERS: &[char] = &['"', '\'', '”', '’', ')', ']', '}'];
const OPENING_QUOTES: &[char] = &['"', '\'', '“', '‘'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Sentence {
    /// Identifier used by every downstream artifact: `{doc_id}:{index}`.
    pub fn id(&self) -> String {
        sentence_id(&self.doc_id, self.index)
    }
}

pub fn sentence_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}:{index}")
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: Vec<Vec<char>>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied())
    }
}

impl Segmenter {
    pub fn with_abbreviations<'a>(abbrevs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut abbreviations: Vec<Vec<char>> = Vec::new();
        for a in abbrevs {
            let a = a.trim();
            if a.is_empty() {
                continue;
            }
            let mut chars: Vec<char> = a.chars().collect();
            if chars.last() != Some(&'.') {
                chars.push('.');
            }
            if !abbreviations.contains(&chars) {
                abbreviations.push(chars);
            }
        }
        Self { abbreviations }
    }

    /// Defaults plus the entries of an abbreviation file (one per line,
    /// `#` starts a comment line).
    pub fn from_file(path: &Path) -> io::Result<Self> {
        let extra = fs::read_to_string(path)?;
        let lines = extra
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Ok(Self::with_abbreviations(
            DEFAULT_ABBREVIATIONS.iter().copied().chain(lines),
        ))
    }

    pub fn segment(&self, doc: &Document) -> Vec<Sentence> {
        self.segment_text(&doc.meta.id, &doc.text)
    }

    pub fn segment_text(&self, doc_id: &str, text: &str) -> Vec<Sentence> {
        let chars: Vec<char> = text.chars().collect();
        let mut cuts = self.boundaries(&chars);
        cuts.push(chars.len());

        let mut sentences = Vec::new();
        let mut from = 0;
        for cut in cuts {
            let span = &chars[from..cut];
            if let Some(lead) = span.iter().position(|c| !c.is_whitespace()) {
                let trail = span.iter().rposition(|c| !c.is_whitespace()).unwrap();
                let (start, end) = (from + lead, from + trail + 1);
                sentences.push(Sentence {
                    doc_id: doc_id.to_string(),
                    index: sentences.len(),
                    text: chars[start..end].iter().collect(),
                    start,
                    end,
                });
            }
            from = cut;
        }
        sentences
    }

    /// Ascending split positions strictly inside the text.
    fn boundaries(&self, chars: &[char]) -> Vec<usize> {
        let n = chars.len();
        let mut cuts = Vec::new();
        let mut i = 0;
        while i < n {
            let c = chars[i];
            if c == '\n' {
                // Blank line: LF, optional horizontal space, LF.
                let mut k = i + 1;
                while k < n && (chars[k] == ' ' || chars[k] == '\t') {
                    k += 1;
                }
                if k < n && chars[k] == '\n' {
                    cuts.push(i);
                    i = k;
                    continue;
                }
                i += 1;
                continue;
            }
            if !is_terminator(c) {
                i += 1;
                continue;
            }

            let mut run_end = i;
            while run_end < n && is_terminator(chars[run_end]) {
                run_end += 1;
            }
            let run = &chars[i..run_end];
            let ellipsis = run.contains(&'…') || run.windows(2).any(|w| w[0] == '.' && w[1] == '.');
            let last = run_end - 1;

            let mut k = run_end;
            while k < n && CLOSERS.contains(&chars[k]) {
                k += 1;
            }
            let split = !ellipsis
                && k < n
                && chars[k].is_whitespace()
                && starts_sentence(chars, k)
                && !(run == ['.'] && self.protects_period(chars, last));
            if split {
                cuts.push(k);
            }
            i = k.max(i + 1);
        }
        cuts.dedup();
        cuts
    }

    /// True when the period at `dot` closes an abbreviation or an initial.
    fn protects_period(&self, chars: &[char], dot: usize) -> bool {
        for abbr in &self.abbreviations {
            let len = abbr.len();
            if len > dot + 1 {
                continue;
            }
            let from = dot + 1 - len;
            let window = &chars[from..=dot];
            let matches = window == abbr.as_slice()
                || (window[0] != abbr[0]
                    && window[0].to_lowercase().eq(abbr[0].to_lowercase())
                    && window[0].is_uppercase()
                    && window[1..] == abbr[1..]);
            if matches && (from == 0 || !chars[from - 1].is_alphanumeric()) {
                return true;
            }
        }
        // Single-letter initial such as "J." in "J. Smith".
        dot >= 1
            && chars[dot - 1].is_uppercase()
            && (dot == 1 || !chars[dot - 2].is_alphanumeric() && chars[dot - 2] != '.')
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '…')
}

/// Whitespace at `ws` followed by an uppercase letter, digit or opening quote.
fn starts_sentence(chars: &[char], ws: usize) -> bool {
    chars[ws..]
        .iter()
        .find(|c| !c.is_whitespace())
        .is_some_and(|&c| c.is_uppercase() || c.is_ascii_digit() || OPENING_QUOTES.contains(&c))
}

pub fn segment(doc: &Document) -> Vec<Sentence> {
    Segmenter::default().segment(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(input: &str) -> Vec<String> {
        Segmenter::default()
            .segment_text("d", input)
            .into_iter()
            .map(|s| s.text)
            .collect()
    }

    #[test]
    fn splits_on_terminator_and_capital() {
        assert_eq!(texts("I agree. It works!"), ["I agree.", "It works!"]);
    }

    #[test]
    fn abbreviation_does_not_split() {
        assert_eq!(
            texts("Use ENDS, e.g. vapes, daily."),
            ["Use ENDS, e.g. vapes, daily."]
        );
        assert_eq!(
            texts("As Smith et al. Report, it holds. Next one."),
            ["As Smith et al. Report, it holds.", "Next one."]
        );
        assert_eq!(texts("See Fig. 2 for data."), ["See Fig. 2 for data."]);
        assert_eq!(
            texts("E.g. Vapes differ. Dr. Jones agreed."),
            ["E.g. Vapes differ.", "Dr. Jones agreed."]
        );
    }

    #[test]
    fn decimal_does_not_split() {
        assert_eq!(
            texts("Risk rose 2.5 times. New data exist."),
            ["Risk rose 2.5 times.", "New data exist."]
        );
    }

    #[test]
    fn initials_and_ellipses() {
        assert_eq!(
            texts("Work by J. Smith shows this. Later work differs."),
            ["Work by J. Smith shows this.", "Later work differs."]
        );
        assert_eq!(
            texts("The data are unclear... More work."),
            ["The data are unclear... More work."]
        );
        assert_eq!(texts("Unclear… More."), ["Unclear… More."]);
        assert_eq!(
            texts("Data from the U.K. The study is large."),
            ["Data from the U.K.", "The study is large."]
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            texts("It was 5 p.m. and late."),
            ["It was 5 p.m. and late."]
        );
        assert_eq!(texts("Yes. no split here"), ["Yes. no split here"]);
    }

    #[test]
    fn closing_quotes_and_opening_quotes() {
        assert_eq!(
            texts("He said \"vapes help.\" Then he left."),
            ["He said \"vapes help.\"", "Then he left."]
        );
        assert_eq!(
            texts("It ended. \"Vapes\" are popular. (Maybe.) 2019 was busy."),
            [
                "It ended.",
                "\"Vapes\" are popular. (Maybe.)",
                "2019 was busy."
            ]
        );
        assert_eq!(texts("Really?! Yes."), ["Really?!", "Yes."]);
    }

    #[test]
    fn blank_lines_split_and_headings_survive() {
        assert_eq!(
            texts("Introduction\n\nVapes are common. Data exist\non two lines.\n  \nEnd"),
            [
                "Introduction",
                "Vapes are common.",
                "Data exist\non two lines.",
                "End"
            ]
        );
    }

    #[test]
    fn empty_document() {
        assert!(texts("").is_empty());
        assert!(texts(" \n\n \n").is_empty());
    }

    #[test]
    fn offsets_are_char_based() {
        let s = Segmenter::default().segment_text("d", "Café é. Über alles.");
        assert_eq!(s[1].start, 8);
        assert_eq!(s[1].end, 19);
        assert_eq!(s[0].text, "Café é.");
    }

    #[test]
    fn custom_abbreviations_extend_defaults() {
        let seg =
            Segmenter::with_abbreviations(DEFAULT_ABBREVIATIONS.iter().copied().chain(["Inc"]));
        let out: Vec<_> = seg
            .segment_text("d", "Acme Inc. Sells vapes. Then stop.")
            .into_iter()
            .map(|s| s.text)
            .collect();
        assert_eq!(out, ["Acme Inc. Sells vapes.", "Then stop."]);
    }

    fn text_strategy() -> impl Strategy<Value = String> {
        prop::collection::vec(
            prop_oneof![
                "[A-Z][a-z]{0,6}",
                "[a-z]{1,6}",
                "[0-9]{1,3}(\\.[0-9])?",
                Just(". ".to_string()),
                Just("! ".to_string()),
                Just("? ".to_string()),
                Just("e.g. ".to_string()),
                Just("... ".to_string()),
                Just("\n\n".to_string()),
                Just("\n".to_string()),
                Just(" ".to_string()),
                Just("\" ".to_string()),
                Just("J. ".to_string()),
            ],
            0..40,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn sentence_invariants(text in text_strategy()) {
            let seg = Segmenter::default();
            let sentences = seg.segment_text("d", &text);
            let chars: Vec<char> = text.chars().collect();
            let mut covered = vec![0u8; chars.len()];
            let mut prev_end = 0;
            for (i, s) in sentences.iter().enumerate() {
                prop_assert_eq!(s.index, i);
                prop_assert!(s.start < s.end);
                prop_assert!(s.start >= prev_end);
                prev_end = s.end;
                let sub: String = chars[s.start..s.end].iter().collect();
                prop_assert_eq!(sub.trim(), s.text.as_str());
                prop_assert_eq!(&sub, &s.text);
                for c in covered.iter_mut().take(s.end).skip(s.start) {
                    *c += 1;
                }
            }
            for (c, n) in chars.iter().zip(&covered) {
                if !c.is_whitespace() {
                    prop_assert_eq!(*n, 1);
                }
            }
            prop_assert_eq!(seg.segment_text("d", &text), sentences);
        }
    }
}
