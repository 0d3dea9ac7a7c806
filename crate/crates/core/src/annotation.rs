//! Manual annotation: sampling, per-annotator sessions, agreement.
//!
//! Sessions persist as an event log (JSON lines of [`LabelEvent`]); a
//! session's state is the fold of its events with last-write-wins per
//! sentence.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{DateTime, Duration, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evidence::EvidenceSentence;
use crate::Label;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnnotationError {
    #[error("cannot sample {requested} of {available} sentences")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("sentence {sentence_id:?} is not part of session {session_id:?}")]
    UnknownSentence {
        session_id: String,
        sentence_id: String,
    },
    #[error("duplicate item {0:?} in session")]
    DuplicateItem(String),
    #[error("sessions {0:?} and {1:?} cover different items")]
    ItemSetMismatch(String, String),
    #[error("session {session_id:?} has {missing} unlabeled items")]
    IncompleteSession { session_id: String, missing: usize },
    #[error("agreement undefined: chance agreement is 1 but observed agreement is below 1")]
    DegenerateMarginals,
    #[error("no items to compare")]
    Empty,
    #[error("event for session {event:?} applied to session {session:?}")]
    WrongSession { event: String, session: String },
    #[error("disagreement on {0:?} has no adjudicated label")]
    Unadjudicated(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub session_id: String,
    pub annotator_id: String,
    pub items: Vec<String>,
    pub labels: BTreeMap<String, Label>,
    pub updated_at: DateTime<Utc>,
}

/// One `record_label` call as persisted in the session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub session_id: String,
    pub annotator_id: String,
    pub sentence_id: String,
    pub label: Label,
    pub at: DateTime<Utc>,
}

impl AnnotationSession {
    pub fn new(
        session_id: impl Into<String>,
        annotator_id: impl Into<String>,
        items: Vec<String>,
    ) -> Result<Self, AnnotationError> {
        let mut seen = HashSet::new();
        if let Some(dup) = items.iter().find(|i| !seen.insert(*i)) {
            return Err(AnnotationError::DuplicateItem(dup.clone()));
        }
        Ok(Self {
            session_id: session_id.into(),
            annotator_id: annotator_id.into(),
            items,
            labels: BTreeMap::new(),
            updated_at: DateTime::UNIX_EPOCH,
        })
    }

    pub fn is_complete(&self) -> bool {
        self.labels.len() == self.items.len()
    }

    /// First item, in session order, without a label.
    pub fn next_unlabeled(&self) -> Option<&str> {
        self.items
            .iter()
            .find(|i| !self.labels.contains_key(*i))
            .map(String::as_str)
    }

    /// Applies one event; `updated_at` takes the event's instant.
    pub fn apply(&mut self, event: &LabelEvent) -> Result<(), AnnotationError> {
        if event.session_id != self.session_id {
            return Err(AnnotationError::WrongSession {
                event: event.session_id.clone(),
                session: self.session_id.clone(),
            });
        }
        if !self.items.contains(&event.sentence_id) {
            return Err(AnnotationError::UnknownSentence {
                session_id: self.session_id.clone(),
                sentence_id: event.sentence_id.clone(),
            });
        }
        self.labels.insert(event.sentence_id.clone(), event.label);
        self.updated_at = event.at;
        Ok(())
    }

    /// Builds the event for labeling `sentence_id` now, with a timestamp
    /// strictly after the session's current `updated_at`.
    pub fn event(&self, sentence_id: &str, label: Label) -> LabelEvent {
        let now = Utc::now();
        let at = if now > self.updated_at {
            now
        } else {
            self.updated_at + Duration::microseconds(1)
        };
        LabelEvent {
            session_id: self.session_id.clone(),
            annotator_id: self.annotator_id.clone(),
            sentence_id: sentence_id.to_string(),
            label,
            at,
        }
    }

    /// Folds the events addressed to this session, in log order.
    pub fn replay<'a>(
        mut self,
        events: impl IntoIterator<Item = &'a LabelEvent>,
    ) -> Result<Self, AnnotationError> {
        for e in events {
            if e.session_id == self.session_id {
                self.apply(e)?;
            }
        }
        Ok(self)
    }
}

/// Labels `sentence_id`, overwriting any earlier label.
pub fn record_label(
    mut session: AnnotationSession,
    sentence_id: &str,
    label: Label,
) -> Result<AnnotationSession, AnnotationError> {
    let event = session.event(sentence_id, label);
    session.apply(&event)?;
    Ok(session)
}

/// Seeded uniform sample without replacement; ids come back in draw order.
pub fn sample_for_annotation(
    sentences: &[EvidenceSentence],
    n: usize,
    seed: u64,
) -> Result<Vec<String>, AnnotationError> {
    if n > sentences.len() {
        return Err(AnnotationError::SampleTooLarge {
            requested: n,
            available: sentences.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, sentences.len(), n)
        .into_iter()
        .map(|i| sentences[i].id())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub kappa: f64,
    pub observed_agreement: f64,
    pub expected_agreement: f64,
    pub n_items: u64,
    /// Rows: annotator A's label; columns: annotator B's label, both in
    /// [`Label::ALL`] order.
    pub cross_table: [[u64; 3]; 3],
}

fn complete_labels(s: &AnnotationSession) -> Result<(), AnnotationError> {
    if s.is_complete() {
        Ok(())
    } else {
        Err(AnnotationError::IncompleteSession {
            session_id: s.session_id.clone(),
            missing: s.items.len() - s.labels.len(),
        })
    }
}

/// Cohen's kappa between two fully labeled sessions over the same items.
pub fn cohen_kappa(
    a: &AnnotationSession,
    b: &AnnotationSession,
) -> Result<AgreementResult, AnnotationError> {
    let items_a: BTreeSet<&String> = a.items.iter().collect();
    let items_b: BTreeSet<&String> = b.items.iter().collect();
    if items_a != items_b {
        return Err(AnnotationError::ItemSetMismatch(
            a.session_id.clone(),
            b.session_id.clone(),
        ));
    }
    complete_labels(a)?;
    complete_labels(b)?;
    if a.items.is_empty() {
        return Err(AnnotationError::Empty);
    }

    let mut cross = [[0u64; 3]; 3];
    for item in &a.items {
        cross[a.labels[item].index()][b.labels[item].index()] += 1;
    }
    kappa_from_cross_table(cross)
}

/// Kappa from a 3×3 cross table, evaluated in integer arithmetic up to the
/// final division: `(n·agree − Σ rowᵢ·colᵢ) / (n² − Σ rowᵢ·colᵢ)`.
pub fn kappa_from_cross_table(cross: [[u64; 3]; 3]) -> Result<AgreementResult, AnnotationError> {
    let n: u64 = cross.iter().flatten().sum();
    if n == 0 {
        return Err(AnnotationError::Empty);
    }
    let agree: u64 = (0..3).map(|i| cross[i][i]).sum();
    let chance: u64 = (0..3)
        .map(|c| {
            let row: u64 = cross[c].iter().sum();
            let col: u64 = cross.iter().map(|r| r[c]).sum();
            row * col
        })
        .sum();
    let n2 = n * n;
    let kappa = if chance == n2 {
        if agree == n {
            1.0
        } else {
            return Err(AnnotationError::DegenerateMarginals);
        }
    } else {
        (n as i128 * agree as i128 - chance as i128) as f64 / (n2 - chance) as f64
    };
    Ok(AgreementResult {
        kappa,
        observed_agreement: agree as f64 / n as f64,
        expected_agreement: chance as f64 / n2 as f64,
        n_items: n,
        cross_table: cross,
    })
}

/// Gold labels: items where both annotators agree, plus the adjudicator's
/// label for each disagreement.
pub fn build_gold(
    a: &AnnotationSession,
    b: &AnnotationSession,
    adjudication: Option<&AnnotationSession>,
) -> Result<BTreeMap<String, Label>, AnnotationError> {
    let items_a: BTreeSet<&String> = a.items.iter().collect();
    let items_b: BTreeSet<&String> = b.items.iter().collect();
    if items_a != items_b {
        return Err(AnnotationError::ItemSetMismatch(
            a.session_id.clone(),
            b.session_id.clone(),
        ));
    }
    complete_labels(a)?;
    complete_labels(b)?;
    let mut gold = BTreeMap::new();
    for item in &a.items {
        let (la, lb) = (a.labels[item], b.labels[item]);
        let label = if la == lb {
            la
        } else {
            *adjudication
                .and_then(|adj| adj.labels.get(item))
                .ok_or_else(|| AnnotationError::Unadjudicated(item.clone()))?
        };
        gold.insert(item.clone(), label);
    }
    Ok(gold)
}
