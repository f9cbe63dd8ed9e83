//! Emotion-preferential masked-LM example construction.
//!
//! Tokens belonging to whole words from an emotion word list are selected for
//! prediction with probability `p_emotion` (default 0.5); all other
//! non-special tokens with `p_other` (default 0.15). A selected token is
//! replaced by `<mask>` 80% of the time, by a random regular token 10%, and
//! kept unchanged 10%. Labels carry the original id at selected positions and
//! `ignore_index` elsewhere.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tokenizer::{TokenSpan, Vocab};

/// Masking probabilities and label conventions.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MaskingConfig {
    #[serde(default = "default_p_emotion")]
    pub p_emotion: f64,
    #[serde(default = "default_p_other")]
    pub p_other: f64,
    #[serde(default = "default_ignore_index")]
    pub ignore_index: i64,
}

fn default_p_emotion() -> f64 {
    0.5
}
fn default_p_other() -> f64 {
    0.15
}
fn default_ignore_index() -> i64 {
    -100
}

impl Default for MaskingConfig {
    fn default() -> Self {
        MaskingConfig {
            p_emotion: 0.5,
            p_other: 0.15,
            ignore_index: -100,
        }
    }
}

impl MaskingConfig {
    /// Uniform masking at `p_other` for every token, i.e. plain MLM.
    pub fn plain() -> Self {
        MaskingConfig {
            p_emotion: default_p_other(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        for (name, p) in [("p_emotion", self.p_emotion), ("p_other", self.p_other)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(crate::Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        Ok(())
    }
}

/// One masked training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedExample {
    /// Token ids after masking.
    pub input_ids: Vec<u32>,
    /// Original id at selected positions, `ignore_index` elsewhere.
    pub labels: Vec<i64>,
}

/// Mark which token positions belong to emotion words.
///
/// A token is marked iff its span lies inside a whitespace-delimited word of
/// `text` whose normalized form (lowercased, edge punctuation stripped) is in
/// `emotion_words`. Every subword piece of a marked word is marked; special
/// tokens (span `None`) never are.
pub fn mark_emotion_tokens(
    text: &str,
    spans: &[TokenSpan],
    emotion_words: &HashSet<String>,
) -> Vec<bool> {
    let word_ranges: Vec<(usize, usize)> = crate::tokenizer::split_with_offsets(text)
        .into_iter()
        .filter_map(|(start, word)| {
            let trimmed = word.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                return None;
            }
            if emotion_words.contains(&trimmed.to_lowercase()) {
                Some((start, start + word.len()))
            } else {
                None
            }
        })
        .collect();

    spans
        .iter()
        .map(|span| match span {
            None => false,
            Some((s, e)) => word_ranges.iter().any(|(ws, we)| s >= ws && e <= we),
        })
        .collect()
}

/// Build one masked example from token ids and their emotion marks.
///
/// `emotion_mask` must align with `token_ids`. Special tokens are never
/// selected. Deterministic for a fixed RNG state.
pub fn make_mlm_example(
    token_ids: &[u32],
    emotion_mask: &[bool],
    vocab: &Vocab,
    config: &MaskingConfig,
    rng: &mut impl Rng,
) -> MaskedExample {
    assert_eq!(
        token_ids.len(),
        emotion_mask.len(),
        "token ids and emotion mask must align"
    );
    let n_regular = vocab.len() as u32 - Vocab::NUM_SPECIALS;
    let mut input_ids = Vec::with_capacity(token_ids.len());
    let mut labels = Vec::with_capacity(token_ids.len());

    for (&id, &is_emotion) in token_ids.iter().zip(emotion_mask) {
        if vocab.is_special(id) {
            input_ids.push(id);
            labels.push(config.ignore_index);
            continue;
        }
        let p = if is_emotion { config.p_emotion } else { config.p_other };
        if !rng.gen_bool(p) {
            input_ids.push(id);
            labels.push(config.ignore_index);
            continue;
        }
        labels.push(id as i64);
        let action: f64 = rng.gen();
        if action < 0.8 {
            input_ids.push(Vocab::MASK_ID);
        } else if action < 0.9 && n_regular > 0 {
            input_ids.push(Vocab::NUM_SPECIALS + rng.gen_range(0..n_regular));
        } else {
            input_ids.push(id);
        }
    }

    MaskedExample { input_ids, labels }
}

/// Counts of selection decisions, for run logs and rate checks.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MaskingStats {
    pub emotion_positions: usize,
    pub emotion_selected: usize,
    pub other_positions: usize,
    pub other_selected: usize,
}

impl MaskingStats {
    /// Accumulate stats from one example (selected = label != ignore).
    /// Special positions are not candidates and are excluded. Unselected
    /// positions keep their original id, so a special id with an ignore
    /// label is reliably a special token.
    pub fn record(
        &mut self,
        example: &MaskedExample,
        emotion_mask: &[bool],
        vocab: &Vocab,
        cfg: &MaskingConfig,
    ) {
        for ((&label, &is_emotion), &input) in example
            .labels
            .iter()
            .zip(emotion_mask)
            .zip(example.input_ids.iter())
        {
            let selected = label != cfg.ignore_index;
            if !selected && vocab.is_special(input) {
                continue;
            }
            if is_emotion {
                self.emotion_positions += 1;
                self.emotion_selected += selected as usize;
            } else {
                self.other_positions += 1;
                self.other_selected += selected as usize;
            }
        }
    }

    pub fn emotion_rate(&self) -> f64 {
        self.emotion_selected as f64 / self.emotion_positions.max(1) as f64
    }

    pub fn other_rate(&self) -> f64 {
        self.other_selected as f64 / self.other_positions.max(1) as f64
    }
}
