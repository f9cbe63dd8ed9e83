//! Word-level tokenizer with a corpus-fitted vocabulary.
//!
//! Tokens are lowercased whitespace words. Sequences are wrapped in `<s>` /
//! `</s>`; unknown words map to `<unk>`. The vocabulary keeps the most
//! frequent words up to a cap, with ties broken lexicographically so fitting
//! is deterministic.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MASK: &str = "<mask>";

/// The special tokens, in id order (ids 0..5).
pub const SPECIALS: [&str; 5] = [PAD, UNK, BOS, EOS, MASK];

/// Byte span of a token in the original text. Special tokens have no span.
pub type TokenSpan = Option<(usize, usize)>;

/// A fitted vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const PAD_ID: u32 = 0;
    pub const UNK_ID: u32 = 1;
    pub const BOS_ID: u32 = 2;
    pub const EOS_ID: u32 = 3;
    pub const MASK_ID: u32 = 4;
    pub const NUM_SPECIALS: u32 = 5;

    /// Fit a vocabulary on training texts only. Keeps at most `max_size`
    /// entries including the five specials.
    pub fn fit<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Result<Vocab> {
        if max_size <= SPECIALS.len() {
            return Err(Error::Config(format!(
                "vocab size {max_size} leaves no room beyond the {} specials",
                SPECIALS.len()
            )));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in text.split_whitespace() {
                let lower = tok.to_lowercase();
                if SPECIALS.contains(&lower.as_str()) {
                    continue;
                }
                *counts.entry(lower).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - SPECIALS.len());

        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(ranked.into_iter().map(|(w, _)| w));
        Ok(Vocab::from_words(words))
    }

    /// Rebuild from a saved word list (specials must come first).
    pub fn from_words(words: Vec<String>) -> Vocab {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Vocab { words, index }
    }

    /// Restore the lookup index after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_special(&self, id: u32) -> bool {
        id < Self::NUM_SPECIALS
    }

    pub fn id_of(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word_of(&self, id: u32) -> &str {
        &self.words[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Encode text as `<s> w1 .. wn </s>`, truncated to `max_len` tokens
    /// (the final token is always `</s>`).
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        self.encode_with_spans(text, max_len).0
    }

    /// Encode and report each token's byte span in the input. Specials and
    /// `<unk>` replacements keep the span of the word they cover; `<s>`/`</s>`
    /// have none.
    pub fn encode_with_spans(&self, text: &str, max_len: usize) -> (Vec<u32>, Vec<TokenSpan>) {
        assert!(max_len >= 2, "max_len must fit <s> and </s>");
        let mut ids = vec![Self::BOS_ID];
        let mut spans: Vec<TokenSpan> = vec![None];
        for (start, token) in split_with_offsets(text) {
            if ids.len() == max_len - 1 {
                break;
            }
            let lower = token.to_lowercase();
            let id = self.index.get(&lower).copied().unwrap_or(Self::UNK_ID);
            ids.push(id);
            spans.push(Some((start, start + token.len())));
        }
        ids.push(Self::EOS_ID);
        spans.push(None);
        (ids, spans)
    }

    /// Decode ids to a readable string (specials skipped except `<mask>`).
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut parts = Vec::new();
        for &id in ids {
            if self.is_special(id) && id != Self::MASK_ID {
                continue;
            }
            parts.push(self.word_of(id));
        }
        parts.join(" ")
    }
}

/// Whitespace tokens with their byte offsets.
pub fn split_with_offsets(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}
