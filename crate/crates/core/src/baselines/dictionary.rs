//! Dictionary baseline: a post expresses an emotion when its lexicon score
//! for that category exceeds the category's base frequency on a reference
//! (dev) corpus.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::lexicon::Lexicon;

/// Mapping from lexicon categories to emotion labels, in insertion order.
/// The dictionary baseline covers four labels; Affection has no counterpart
/// in common lexicons and is omitted by the default map.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct CategoryMap(pub IndexMap<String, EmotionLabel>);

impl CategoryMap {
    /// anger -> Anger, fear -> Fear, sadness -> Sadness, positive -> Happiness.
    pub fn default_map() -> Self {
        let mut m = IndexMap::new();
        m.insert("sadness".to_string(), EmotionLabel::Sadness);
        m.insert("anger".to_string(), EmotionLabel::Anger);
        m.insert("fear".to_string(), EmotionLabel::Fear);
        m.insert("positive".to_string(), EmotionLabel::Happiness);
        CategoryMap(m)
    }

    pub fn category_for(&self, label: EmotionLabel) -> Option<&str> {
        self.0
            .iter()
            .find(|(_, l)| **l == label)
            .map(|(c, _)| c.as_str())
    }
}

/// Base category frequencies estimated on a reference corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DictionaryModel {
    pub category_map: CategoryMap,
    /// category -> mean lexicon score on the reference corpus.
    pub base: IndexMap<String, f64>,
}

impl DictionaryModel {
    /// Estimate base frequencies as the mean category score over the
    /// reference texts (one mean per mapped category).
    pub fn fit(lexicon: &Lexicon, category_map: CategoryMap, reference: &[String]) -> Result<Self> {
        if reference.is_empty() {
            return Err(Error::InvalidInput("empty reference corpus for base frequencies".into()));
        }
        let mut base = IndexMap::new();
        for category in category_map.0.keys() {
            let mut sum = 0.0;
            for text in reference {
                sum += lexicon.category_score(text, category)?;
            }
            base.insert(category.clone(), sum / reference.len() as f64);
        }
        Ok(DictionaryModel {
            category_map,
            base,
        })
    }

    /// Does `text` express `category`? True when the score-to-base quotient
    /// exceeds 1; a zero base falls back to "any positive score".
    pub fn predict(&self, lexicon: &Lexicon, text: &str, category: &str) -> Result<bool> {
        let base = *self
            .base
            .get(category)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
        let score = lexicon.category_score(text, category)?;
        if base == 0.0 {
            Ok(score > 0.0)
        } else {
            Ok(score / base > 1.0)
        }
    }

    /// One-vs-rest binary F1 (percent) per mapped label on a labeled set.
    pub fn evaluate(
        &self,
        lexicon: &Lexicon,
        posts: &[(String, EmotionLabel)],
    ) -> Result<IndexMap<String, f64>> {
        if posts.is_empty() {
            return Err(Error::Eval("empty evaluation set".into()));
        }
        let mut out = IndexMap::new();
        for (category, label) in self.category_map.0.iter() {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            for (text, gold) in posts {
                let predicted = self.predict(lexicon, text, category)?;
                let actual = gold == label;
                match (actual, predicted) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let f1 = if 2 * tp + fp + fn_ == 0 {
                0.0
            } else {
                100.0 * (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
            };
            out.insert(label.name().to_string(), f1);
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })
    }
}
