//! Out-of-domain label harmonization and template masking.

use std::collections::HashSet;

use crate::label::EmotionLabel;

/// Map an out-of-domain label string onto the shared four-class space.
///
/// Joy and Affection fold into Happiness; Sadness, Anger, and Fear map to
/// themselves; anything else (surprise, disgust, guilt, shame, neutral, ...)
/// is excluded with `None`. Matching is case-insensitive. The mapping is
/// idempotent over its own output names.
pub fn map_ood_label(label: &str) -> Option<EmotionLabel> {
    match label.trim().to_lowercase().as_str() {
        "sadness" | "sad" => Some(EmotionLabel::Sadness),
        "anger" | "angry" => Some(EmotionLabel::Anger),
        "fear" | "afraid" => Some(EmotionLabel::Fear),
        "happiness" | "happy" | "joy" | "affection" => Some(EmotionLabel::Happiness),
        _ => None,
    }
}

/// Outcome of preparing one templated self-report sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedTemplate {
    pub text: String,
    /// False when no emotion word could be located (the text is passed
    /// through unmodified).
    pub modified: bool,
}

/// Replace the emotion word of an "I felt <emotion> when/because ..."
/// sentence with the literal `<mask>` token.
///
/// The emotion word is located between the "felt" cue and the first
/// "when"/"because" delimiter by lookup against `emotion_words` (modifiers
/// such as "deeply" are kept). If the slot already contains `<mask>` the
/// text is returned unchanged; if no emotion word matches, the text is
/// flagged and passed through.
pub fn prepare_enisear(text: &str, emotion_words: &HashSet<String>) -> PreparedTemplate {
    let unmodified = |modified| PreparedTemplate {
        text: text.to_string(),
        modified,
    };

    let tokens = crate::tokenizer::split_with_offsets(text);
    let lowered: Vec<String> = tokens.iter().map(|(_, t)| t.to_lowercase()).collect();
    let Some(felt_pos) = lowered
        .iter()
        .position(|t| t.trim_matches(|c: char| !c.is_alphanumeric()) == "felt")
    else {
        return unmodified(false);
    };
    let delim_pos = lowered
        .iter()
        .enumerate()
        .skip(felt_pos + 1)
        .find(|(_, t)| {
            let w = t.trim_matches(|c: char| !c.is_alphanumeric());
            w == "when" || w == "because"
        })
        .map(|(i, _)| i)
        .unwrap_or(tokens.len());

    if felt_pos + 1 >= delim_pos {
        return unmodified(false);
    }
    let slot = &tokens[felt_pos + 1..delim_pos];

    // Idempotence: a slot that already carries <mask> stays as-is.
    if slot.iter().any(|(_, t)| t.to_lowercase().contains("<mask>")) {
        return unmodified(true);
    }

    // Last lexicon hit in the slot; if the slot is a single word, trust the
    // template even when the word is missing from the list.
    let normalized =
        |t: &str| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
    let hit = slot
        .iter()
        .rposition(|(_, t)| emotion_words.contains(&normalized(t)))
        .or(if slot.len() == 1 { Some(0) } else { None });
    let Some(rel) = hit else {
        return unmodified(false);
    };

    let (start, word) = slot[rel];
    // Replace only the word itself, keeping attached punctuation.
    let core_start = start + word.len() - word.trim_start_matches(|c: char| !c.is_alphanumeric()).len();
    let core = word.trim_matches(|c: char| !c.is_alphanumeric());
    let core_range = core_start..core_start + core.len();
    if core.is_empty() {
        return unmodified(false);
    }

    let mut out = String::with_capacity(text.len());
    out.push_str(&text[..core_range.start]);
    out.push_str("<mask>");
    out.push_str(&text[core_range.end..]);
    PreparedTemplate {
        text: out,
        modified: true,
    }
}
