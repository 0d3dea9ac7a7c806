use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Stance of an evidence sentence towards the public-health effect of ENDS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Helpful,
    Harmful,
    Neither,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Helpful, Label::Harmful, Label::Neither];

    /// Position in [`Label::ALL`]; used as the row/column index of 3×3 tables.
    pub fn index(self) -> usize {
        match self {
            Label::Helpful => 0,
            Label::Harmful => 1,
            Label::Neither => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Helpful => "helpful",
            Label::Harmful => "harmful",
            Label::Neither => "neither",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid label token {0:?} (expected helpful, harmful or neither)")]
pub struct ParseLabelError(pub String);

impl FromStr for Label {
    type Err = ParseLabelError;

    /// Case-insensitive; surrounding whitespace is ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Label::ALL
            .into_iter()
            .find(|l| t.eq_ignore_ascii_case(l.as_str()))
            .ok_or_else(|| ParseLabelError(s.to_string()))
    }
}
