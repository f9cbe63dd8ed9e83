//! English detection by majority vote over three pluggable detectors.

/// A language detector votes on whether a text is English.
pub trait LanguageDetector: Send + Sync {
    fn name(&self) -> &str;
    fn is_english(&self, text: &str) -> bool;
}

/// True when at least 2 of the 3 detectors vote English.
pub fn is_english(text: &str, detectors: &[Box<dyn LanguageDetector>; 3]) -> bool {
    let votes = detectors.iter().filter(|d| d.is_english(text)).count();
    votes >= 2
}

/// The default detector bank: three cheap, independent heuristics. They are
/// deliberately simple stand-ins for heavyweight language-ID models; the vote
/// logic upstream only assumes the trait.
pub fn default_detectors() -> [Box<dyn LanguageDetector>; 3] {
    [
        Box::new(AsciiAlphaRatio { min_ratio: 0.85 }),
        Box::new(FunctionWords { min_fraction: 0.08 }),
        Box::new(LetterFrequency { min_similarity: 0.55 }),
    ]
}

/// Votes English when most alphabetic characters are ASCII.
pub struct AsciiAlphaRatio {
    pub min_ratio: f64,
}

impl LanguageDetector for AsciiAlphaRatio {
    fn name(&self) -> &str {
        "ascii_alpha_ratio"
    }

    fn is_english(&self, text: &str) -> bool {
        let mut alpha = 0usize;
        let mut ascii_alpha = 0usize;
        for c in text.chars() {
            if c.is_alphabetic() {
                alpha += 1;
                if c.is_ascii_alphabetic() {
                    ascii_alpha += 1;
                }
            }
        }
        if alpha == 0 {
            return false;
        }
        ascii_alpha as f64 / alpha as f64 >= self.min_ratio
    }
}

/// Votes English when common English function words make up enough of the
/// tokens (with at least one hit).
pub struct FunctionWords {
    pub min_fraction: f64,
}

const FUNCTION_WORDS: &[&str] = &[
    "i", "the", "a", "an", "to", "of", "and", "in", "is", "it", "you", "that", "he", "she",
    "was", "for", "on", "are", "with", "as", "his", "her", "they", "be", "at", "have", "this",
    "from", "or", "had", "by", "not", "but", "what", "all", "we", "when", "so", "my", "me",
    "do", "im", "its", "dont", "cant", "just", "feel", "feeling", "am", "no", "yes", "like",
];

impl LanguageDetector for FunctionWords {
    fn name(&self) -> &str {
        "function_words"
    }

    fn is_english(&self, text: &str) -> bool {
        let mut total = 0usize;
        let mut hits = 0usize;
        for token in text.split_whitespace() {
            let word: String = token
                .chars()
                .filter(|c| c.is_alphabetic())
                .collect::<String>()
                .to_lowercase();
            if word.is_empty() {
                continue;
            }
            total += 1;
            if FUNCTION_WORDS.contains(&word.as_str()) {
                hits += 1;
            }
        }
        if total == 0 {
            return false;
        }
        hits >= 1 && hits as f64 / total as f64 >= self.min_fraction
    }
}

/// Votes English when the letter frequency histogram is close (cosine
/// similarity) to a reference English profile.
pub struct LetterFrequency {
    pub min_similarity: f64,
}

// Relative frequencies of a-z in running English text.
const ENGLISH_LETTER_FREQ: [f64; 26] = [
    0.0817, 0.0150, 0.0278, 0.0425, 0.1270, 0.0223, 0.0202, 0.0609, 0.0697, 0.0015, 0.0077,
    0.0403, 0.0241, 0.0675, 0.0751, 0.0193, 0.0010, 0.0599, 0.0633, 0.0906, 0.0276, 0.0098,
    0.0236, 0.0015, 0.0197, 0.0007,
];

impl LanguageDetector for LetterFrequency {
    fn name(&self) -> &str {
        "letter_frequency"
    }

    fn is_english(&self, text: &str) -> bool {
        let mut counts = [0f64; 26];
        let mut total = 0f64;
        for c in text.chars() {
            if c.is_ascii_alphabetic() {
                counts[(c.to_ascii_lowercase() as u8 - b'a') as usize] += 1.0;
                total += 1.0;
            } else if c.is_alphabetic() {
                // Non-ASCII letters count against the profile.
                total += 1.0;
            }
        }
        if total == 0.0 {
            return false;
        }
        let mut dot = 0.0;
        let mut norm_a = 0.0;
        let mut norm_b = 0.0;
        for i in 0..26 {
            let f = counts[i] / total;
            dot += f * ENGLISH_LETTER_FREQ[i];
            norm_a += f * f;
            norm_b += ENGLISH_LETTER_FREQ[i] * ENGLISH_LETTER_FREQ[i];
        }
        if norm_a == 0.0 {
            return false;
        }
        dot / (norm_a.sqrt() * norm_b.sqrt()) >= self.min_similarity
    }
}
