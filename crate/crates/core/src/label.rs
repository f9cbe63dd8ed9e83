//! The five emotion categories and their fixed ordering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Emotion category of a post. The ordering is fixed and used everywhere a
/// deterministic label order is needed (tie-breaking, report columns,
/// classifier output indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EmotionLabel {
    Sadness,
    Anger,
    Fear,
    Affection,
    Happiness,
}

impl EmotionLabel {
    /// All five labels in canonical order.
    pub const ALL: [EmotionLabel; 5] = [
        EmotionLabel::Sadness,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Affection,
        EmotionLabel::Happiness,
    ];

    /// The four-class subset used for out-of-domain evaluation (no Affection).
    pub const FOUR_CLASS: [EmotionLabel; 4] = [
        EmotionLabel::Sadness,
        EmotionLabel::Anger,
        EmotionLabel::Fear,
        EmotionLabel::Happiness,
    ];

    /// Index of the label in canonical order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).expect("label in ALL")
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Sadness => "Sadness",
            EmotionLabel::Anger => "Anger",
            EmotionLabel::Fear => "Fear",
            EmotionLabel::Affection => "Affection",
            EmotionLabel::Happiness => "Happiness",
        }
    }

    /// Parse a label name, case-insensitively.
    pub fn parse(s: &str) -> Result<EmotionLabel> {
        let lower = s.trim().to_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name().to_lowercase() == lower)
            .ok_or_else(|| Error::InvalidInput(format!("unknown emotion label: {s:?}")))
    }
}

impl std::fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
