//! Word-emotion association lexicon: loading, saving, and text scoring.
//!
//! The on-disk format is tab-separated `word<TAB>category<TAB>flag` with flag
//! 0 or 1. Only flag=1 rows make a word a member of a category, but every row
//! contributes to the known word and category inventories.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// An emotion lexicon: word-to-category memberships plus the inventories of
/// all words and categories seen in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    /// word -> categories it belongs to (flag=1 rows only).
    entries: BTreeMap<String, BTreeSet<String>>,
    words: BTreeSet<String>,
    categories: BTreeSet<String>,
}

impl Lexicon {
    pub fn new() -> Self {
        Lexicon {
            entries: BTreeMap::new(),
            words: BTreeSet::new(),
            categories: BTreeSet::new(),
        }
    }

    /// Build a lexicon from `(word, category)` membership pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut lex = Lexicon::new();
        for (word, category) in pairs {
            lex.insert(&word, &category);
        }
        lex
    }

    pub fn insert(&mut self, word: &str, category: &str) {
        let word = word.to_lowercase();
        self.words.insert(word.clone());
        self.categories.insert(category.to_string());
        self.entries.entry(word).or_default().insert(category.to_string());
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|s| s.as_str())
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains(category)
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    /// Is `word` (lowercased) a member of `category`?
    pub fn is_member(&self, word: &str, category: &str) -> bool {
        self.entries
            .get(&word.to_lowercase())
            .map(|cats| cats.contains(category))
            .unwrap_or(false)
    }

    /// All member words of the given categories; `None` means every category.
    /// This is the word list used for emotion-preferential masking.
    pub fn word_set(&self, categories: Option<&[String]>) -> HashSet<String> {
        let mut set = HashSet::new();
        for (word, cats) in &self.entries {
            let hit = match categories {
                None => !cats.is_empty(),
                Some(wanted) => wanted.iter().any(|c| cats.contains(c)),
            };
            if hit {
                set.insert(word.clone());
            }
        }
        set
    }

    /// Fraction of tokens of `text` that belong to `category`.
    ///
    /// Tokens are whitespace-split, stripped of leading/trailing punctuation,
    /// and lowercased; tokens that are empty after stripping are not counted.
    /// Empty text scores 0. Unknown categories are an error.
    pub fn category_score(&self, text: &str, category: &str) -> Result<f64> {
        if !self.has_category(category) {
            return Err(Error::UnknownCategory(category.to_string()));
        }
        let tokens = tokenize_words(text);
        if tokens.is_empty() {
            return Ok(0.0);
        }
        let hits = tokens.iter().filter(|t| self.is_member(t, category)).count();
        Ok(hits as f64 / tokens.len() as f64)
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::new()
    }
}

/// Shared word tokenization for lexicon scoring and bag-of-words baselines:
/// whitespace split, strip leading/trailing non-alphanumeric characters,
/// lowercase, drop tokens that end up empty.
pub fn tokenize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|tok| {
            let trimmed = tok.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_lowercase())
            }
        })
        .collect()
}

/// Load a lexicon from the tab-separated `word  category  flag` format.
/// Malformed lines (wrong field count, flag not 0/1) are an error that names
/// the line number. Duplicate rows collapse.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_lexicon(BufReader::new(file))
}

/// Parse the lexicon format from any reader. See [`load_lexicon`].
pub fn parse_lexicon(reader: impl BufRead) -> Result<Lexicon> {
    let mut lex = Lexicon::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::LexiconFormat {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::LexiconFormat {
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let (word, category, flag) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if word.is_empty() || category.is_empty() {
            return Err(Error::LexiconFormat {
                line: lineno + 1,
                msg: "empty word or category".to_string(),
            });
        }
        match flag {
            "1" => lex.insert(word, category),
            "0" => {
                lex.words.insert(word.to_lowercase());
                lex.categories.insert(category.to_string());
            }
            other => {
                return Err(Error::LexiconFormat {
                    line: lineno + 1,
                    msg: format!("flag must be 0 or 1, got {other:?}"),
                });
            }
        }
    }
    Ok(lex)
}

/// Save a lexicon in the same format it is loaded from. Every known word is
/// written against every known category with its membership flag, sorted by
/// word then category, so `load(save(lex)) == lex` exactly.
pub fn save_lexicon(lex: &Lexicon, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for word in &lex.words {
        for category in &lex.categories {
            let flag = if lex.is_member(word, category) { 1 } else { 0 };
            writeln!(writer, "{word}\t{category}\t{flag}").map_err(|e| Error::io(path, e))?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn lex_from(text: &str) -> Lexicon {
        parse_lexicon(Cursor::new(text)).expect("parse lexicon")
    }

    #[test]
    fn loads_flagged_memberships_only() {
        let lex = lex_from("abandon\tfear\t1\nabandon\tjoy\t0\ncalm\tjoy\t1\n");
        assert!(lex.is_member("abandon", "fear"));
        assert!(!lex.is_member("abandon", "joy"));
        assert!(lex.is_member("calm", "joy"));
        let cats: Vec<_> = lex.categories().collect();
        assert_eq!(cats, ["fear", "joy"]);
    }

    #[test]
    fn duplicate_rows_collapse() {
        let lex = lex_from("sad\tsadness\t1\nsad\tsadness\t1\n");
        assert_eq!(lex.word_count(), 1);
        assert!(lex.is_member("sad", "sadness"));
    }

    #[test]
    fn empty_input_yields_empty_lexicon() {
        let lex = lex_from("");
        assert_eq!(lex.word_count(), 0);
        assert_eq!(lex.categories().count(), 0);
    }

    #[test]
    fn malformed_lines_name_the_line_number() {
        let err = parse_lexicon(Cursor::new("ok\tfear\t1\nbroken line\n")).unwrap_err();
        match err {
            Error::LexiconFormat { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
        let err = parse_lexicon(Cursor::new("w\tc\t2\n")).unwrap_err();
        match err {
            Error::LexiconFormat { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn save_load_round_trips_exactly() {
        let lex = lex_from("alpha\tfear\t1\nalpha\tjoy\t0\nbeta\tjoy\t1\ngamma\tanger\t0\n");
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("lex.tsv");
        save_lexicon(&lex, &path).expect("save");
        let back = load_lexicon(&path).expect("load");
        assert_eq!(back, lex);
        // And a second round trip produces identical bytes.
        let path2 = dir.path().join("lex2.tsv");
        save_lexicon(&back, &path2).expect("save again");
        assert_eq!(
            std::fs::read(&path).expect("read 1"),
            std::fs::read(&path2).expect("read 2")
        );
    }

    #[test]
    fn category_score_matches_hand_count() {
        let lex = lex_from("alone\tsadness\t1\nempty\tsadness\t1\nsad\tsadness\t1\n");
        // 2 sadness words in 8 counted tokens.
        let text = "I feel so alone and sad tonight friends";
        let score = lex.category_score(text, "sadness").expect("score");
        assert!((score - 2.0 / 8.0).abs() < 1e-12);
    }

    #[test]
    fn category_score_fifty_word_text_matches_manual_count() {
        let lex = lex_from("storm\tfear\t1\ndark\tfear\t1\nafraid\tfear\t1\n");
        // 50 words, built from 10 repeats of a 5-word sentence with exactly
        // 2 lexicon hits each: 20/50.
        let sentence = "the dark storm scares everyone";
        let text = vec![sentence; 10].join(" ");
        assert_eq!(text.split_whitespace().count(), 50);
        let score = lex.category_score(&text, "fear").expect("score");
        assert!((score - 20.0 / 50.0).abs() < 1e-12);
    }

    #[test]
    fn category_score_strips_punctuation_and_case() {
        let lex = lex_from("sad\tsadness\t1\n");
        let score = lex.category_score("Sad, so SAD!", "sadness").expect("score");
        assert!((score - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn category_score_empty_text_is_zero() {
        let lex = lex_from("sad\tsadness\t1\n");
        assert_eq!(lex.category_score("", "sadness").expect("score"), 0.0);
        assert_eq!(lex.category_score("... !!!", "sadness").expect("score"), 0.0);
    }

    #[test]
    fn unknown_category_is_an_error() {
        let lex = lex_from("sad\tsadness\t1\n");
        assert!(matches!(
            lex.category_score("sad", "zeal"),
            Err(Error::UnknownCategory(_))
        ));
    }

    #[test]
    fn word_set_filters_by_category() {
        let lex = lex_from("alone\tsadness\t1\nfuming\tanger\t1\nglad\tjoy\t1\n");
        let all = lex.word_set(None);
        assert_eq!(all.len(), 3);
        let sad_only = lex.word_set(Some(&["sadness".to_string()]));
        assert!(sad_only.contains("alone") && sad_only.len() == 1);
    }

    #[test]
    fn scores_stay_in_unit_interval() {
        use proptest::prelude::*;
        let lex = lex_from("sad\tsadness\t1\nalone\tsadness\t1\n");
        proptest!(|(text in "[a-z !,.]{0,60}")| {
            let s = lex.category_score(&text, "sadness").expect("score");
            prop_assert!((0.0..=1.0).contains(&s));
        });
    }
}
