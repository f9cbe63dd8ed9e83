//! Corpus cleaning: normalization, language filtering, tag mapping, length
//! filtering, and duplicate/meme removal.
//!
//! `run_pipeline` applies the stages in a fixed order and reports per-stage
//! drop counts, so a corpus can be rebuilt reproducibly from raw exports.

pub mod dedup;
pub mod language;
pub mod normalize;

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
pub use dedup::{flag_duplicates_and_memes, DropReason};
pub use language::{default_detectors, is_english, LanguageDetector};
pub use normalize::normalize_text;

/// A raw post as exported from the source platform.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RawPost {
    pub id: String,
    pub user_id: String,
    /// Seconds since epoch (any sortable scalar works).
    pub timestamp: i64,
    /// Platform mood tag, e.g. "Lonely" or "Furious".
    pub tag: String,
    pub text: String,
}

/// A post that survived the pipeline, carrying its mapped label.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CleanPost {
    pub id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub label: EmotionLabel,
    pub text: String,
}

/// Case-insensitive mapping from platform mood tags to emotion labels.
#[derive(Debug, Clone)]
pub struct TagMap {
    map: HashMap<String, EmotionLabel>,
}

/// The default tag inventory: 22 mood tags grouped into the five categories.
pub const DEFAULT_TAG_GROUPS: [(&str, EmotionLabel); 22] = [
    ("Lonely", EmotionLabel::Sadness),
    ("Sad", EmotionLabel::Sadness),
    ("Miserable", EmotionLabel::Sadness),
    ("Angry", EmotionLabel::Anger),
    ("Annoyed", EmotionLabel::Anger),
    ("Frustrated", EmotionLabel::Anger),
    ("Furious", EmotionLabel::Anger),
    ("Anxious", EmotionLabel::Fear),
    ("Stressed", EmotionLabel::Fear),
    ("Afraid", EmotionLabel::Fear),
    ("Nervous", EmotionLabel::Fear),
    ("Worried", EmotionLabel::Fear),
    ("Affectionate", EmotionLabel::Affection),
    ("Loving", EmotionLabel::Affection),
    ("Caring", EmotionLabel::Affection),
    ("Adoring", EmotionLabel::Affection),
    ("Cuddly", EmotionLabel::Affection),
    ("Supportive", EmotionLabel::Affection),
    ("Passionate", EmotionLabel::Affection),
    ("Infatuated", EmotionLabel::Affection),
    ("Happy", EmotionLabel::Happiness),
    ("Excited", EmotionLabel::Happiness),
];

impl TagMap {
    /// Build the default 22-tag mapping.
    pub fn default_map() -> Self {
        Self::from_pairs(DEFAULT_TAG_GROUPS.iter().map(|(t, l)| (t.to_string(), *l)))
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, EmotionLabel)>) -> Self {
        let map = pairs
            .into_iter()
            .map(|(tag, label)| (tag.to_lowercase(), label))
            .collect();
        TagMap { map }
    }

    /// Load a JSON object of `{"Tag": "Label", ...}`.
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: IndexMap<String, String> = serde_json::from_str(&raw).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut pairs = Vec::new();
        for (tag, label) in parsed {
            pairs.push((tag, EmotionLabel::parse(&label)?));
        }
        Ok(Self::from_pairs(pairs))
    }

    /// Map a tag (case-insensitively) to its label, if the tag is known.
    pub fn map_tag(&self, tag: &str) -> Option<EmotionLabel> {
        self.map.get(&tag.to_lowercase()).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// True when a token carries no content: link/user placeholders, raw URLs,
/// and @-mentions.
fn is_placeholder(token: &str) -> bool {
    token == "[LINK]"
        || token == "[USER]"
        || token.starts_with("http://")
        || token.starts_with("https://")
        || (token.len() > 1 && token.starts_with('@'))
}

/// True when the text has at least `min_words` whitespace tokens after
/// placeholder tokens are excluded.
pub fn passes_length_filter(text: &str, min_words: usize) -> bool {
    text.split_whitespace().filter(|t| !is_placeholder(t)).count() >= min_words
}

/// Per-stage accounting for one pipeline run.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct PipelineStats {
    pub input_records: usize,
    /// Records that failed to parse upstream (filled in by callers that read
    /// from disk; the in-memory pipeline never sees them).
    pub malformed: usize,
    pub language_dropped: usize,
    pub tag_dropped: usize,
    pub length_dropped: usize,
    pub duplicate_dropped: usize,
    pub meme_dropped: usize,
    pub kept: usize,
}

/// Pipeline knobs.
pub struct PipelineConfig {
    pub tag_map: TagMap,
    pub min_words: usize,
    pub meme_user_threshold: usize,
    pub detectors: [Box<dyn LanguageDetector>; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tag_map: TagMap::default_map(),
            min_words: 3,
            meme_user_threshold: 10,
            detectors: default_detectors(),
        }
    }
}

/// Run the full cleaning pipeline in order: normalize, language filter, tag
/// mapping, length filter, duplicate/meme removal.
///
/// The kept set and label assignment do not depend on the input order; the
/// output is emitted in input order.
pub fn run_pipeline(posts: &[RawPost], config: &PipelineConfig) -> (Vec<CleanPost>, PipelineStats) {
    let mut stats = PipelineStats {
        input_records: posts.len(),
        ..Default::default()
    };

    // Per-post filters first, then corpus-level dedup over the survivors.
    let mut survivors: Vec<(usize, RawPost, EmotionLabel)> = Vec::new();
    for (idx, post) in posts.iter().enumerate() {
        let text = normalize_text(&post.text);
        if !is_english(&text, &config.detectors) {
            stats.language_dropped += 1;
            continue;
        }
        let Some(label) = config.tag_map.map_tag(&post.tag) else {
            stats.tag_dropped += 1;
            continue;
        };
        if !passes_length_filter(&text, config.min_words) {
            stats.length_dropped += 1;
            continue;
        }
        let mut cleaned = post.clone();
        cleaned.text = text;
        survivors.push((idx, cleaned, label));
    }

    let flat: Vec<RawPost> = survivors.iter().map(|(_, p, _)| p.clone()).collect();
    let flags = flag_duplicates_and_memes(&flat, config.meme_user_threshold);

    let mut out = Vec::new();
    for ((_, post, label), flag) in survivors.into_iter().zip(flags) {
        match flag {
            Ok(()) => {
                out.push(CleanPost {
                    id: post.id,
                    user_id: post.user_id,
                    timestamp: post.timestamp,
                    label,
                    text: post.text,
                });
            }
            Err(DropReason::Duplicate) => stats.duplicate_dropped += 1,
            Err(DropReason::Meme) => stats.meme_dropped += 1,
        }
    }
    stats.kept = out.len();
    (out, stats)
}
