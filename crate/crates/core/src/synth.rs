//! Seeded synthetic-corpus generation. Each emotion class gets a pool of
//! distinctive marker words, so generated posts are linearly separable in
//! principle and every training stage can be exercised end to end on a desk
//! machine. The generator also emits the matching emotion lexicon, raw
//! tagged posts (optionally with pipeline noise: markup, links, duplicates,
//! meme reposts, non-English text, unknown tags), and template-style
//! out-of-domain sentences.

use std::io::Cursor;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{RawPost, DEFAULT_TAG_GROUPS};
use crate::label::EmotionLabel;
use crate::lexicon::{parse_lexicon, Lexicon};
use crate::seeding::stream_rng;

/// Distinctive marker words per class, all lowercase.
pub fn marker_words(label: EmotionLabel) -> &'static [&'static str] {
    match label {
        EmotionLabel::Sadness => &[
            "gloom", "sorrow", "weeping", "downcast", "mourning", "heartbroken", "dreary",
            "sobbing",
        ],
        EmotionLabel::Anger => &[
            "fuming", "rage", "irritated", "seething", "snapping", "livid", "resentful",
            "outraged",
        ],
        EmotionLabel::Fear => &[
            "dread", "trembling", "panicked", "uneasy", "terrified", "jittery", "spooked",
            "alarmed",
        ],
        EmotionLabel::Affection => &[
            "cuddles", "darling", "cherish", "devoted", "tender", "sweetheart", "embrace",
            "adore",
        ],
        EmotionLabel::Happiness => &[
            "delight", "sunshine", "grinning", "cheerful", "jubilant", "giggling", "upbeat",
            "radiant",
        ],
    }
}

const TOPICS: [&str; 8] = [
    "work",
    "school",
    "the game",
    "my week",
    "the news",
    "everything",
    "the weekend",
    "practice",
];

/// Lexicon covering every marker word. Categories sadness, anger, fear, and
/// positive line up with the dictionary baseline's default mapping; the
/// affection category exists only so masking sees those markers too.
pub fn synth_lexicon() -> Lexicon {
    let mut tsv = String::new();
    for label in EmotionLabel::ALL {
        let category = match label {
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Affection => "affection",
            EmotionLabel::Happiness => "positive",
        };
        for word in marker_words(label) {
            tsv.push_str(&format!("{word}\t{category}\t1\n"));
        }
    }
    parse_lexicon(Cursor::new(tsv)).expect("generated lexicon is well formed")
}

fn compose_text(label: EmotionLabel, rng: &mut impl Rng) -> String {
    let markers = marker_words(label);
    let m1 = markers.choose(rng).expect("marker");
    let m2 = markers.choose(rng).expect("marker");
    let topic = TOPICS.choose(rng).expect("topic");
    match rng.gen_range(0..5) {
        0 => format!("feeling {m1} and {m2} about {topic} today"),
        1 => format!("so {m1} right now honestly"),
        2 => format!("that {topic} left me {m1} and {m2}"),
        3 => format!("{m1} again because of {topic}"),
        _ => format!("cannot stop feeling {m1} since {topic} happened"),
    }
}

/// Clean labeled texts with balanced classes, for training and evaluation
/// fixtures. Labels cycle through the fixed order.
pub fn generate_labeled(n: usize, seed: u64) -> Vec<(String, EmotionLabel)> {
    let mut rng = stream_rng(seed, "synth/labeled");
    (0..n)
        .map(|i| {
            let label = EmotionLabel::ALL[i % EmotionLabel::ALL.len()];
            (compose_text(label, &mut rng), label)
        })
        .collect()
}

/// Controls for raw-corpus generation.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub posts: usize,
    pub users: usize,
    pub seed: u64,
    /// Epoch seconds of the first post; later posts step forward by 7s each,
    /// so timestamps are unique and strictly increasing.
    pub start_timestamp: i64,
    /// Mix in records the cleaning pipeline must drop or repair: markup and
    /// entities, links and mentions, non-English posts, too-short posts,
    /// duplicate reposts, a meme copied across many users, unknown tags.
    pub noise: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            posts: 1000,
            users: 40,
            seed: 7,
            start_timestamp: 1_600_000_000,
            noise: true,
        }
    }
}

/// Tagged raw posts ready for the cleaning pipeline. Tags come from the
/// default tag table for the post's class.
pub fn generate_raw(config: &SynthConfig) -> Vec<RawPost> {
    let mut rng = stream_rng(config.seed, "synth/raw");
    let mut posts = Vec::with_capacity(config.posts);
    let meme_text = "repost this gloom sunshine chain for luck".to_string();
    for i in 0..config.posts {
        let label = EmotionLabel::ALL[i % EmotionLabel::ALL.len()];
        let tags: Vec<&str> = DEFAULT_TAG_GROUPS
            .iter()
            .filter(|(_, l)| *l == label)
            .map(|(t, _)| *t)
            .collect();
        let tag = tags.choose(&mut rng).expect("tag for label").to_string();
        let mut text = compose_text(label, &mut rng);
        let mut user = format!("u{:04}", rng.gen_range(0..config.users));
        let mut final_tag = tag;
        if config.noise {
            match i % 50 {
                7 => text = format!("<b>{text}</b> &amp; more"),
                13 => text.push_str(" http://example.com/post @friend"),
                21 => text = "la lluvia cae sobre la ciudad y el rio crece".to_string(),
                29 => text = "ok".to_string(),
                33 => final_tag = "Bored".to_string(),
                41 => {
                    // A meme: same text from many distinct users.
                    text = meme_text.clone();
                    user = format!("meme{:03}", i);
                }
                47 if i > 50 => {
                    // Exact duplicate of an earlier slot from the same user.
                    text = "so gloom right now honestly".to_string();
                    user = "u0000".to_string();
                }
                _ => {}
            }
        }
        posts.push(RawPost {
            id: format!("p{i:06}"),
            user_id: user,
            timestamp: config.start_timestamp + (i as i64) * 7,
            tag: final_tag,
            text,
        });
    }
    posts
}

/// Out-of-domain style labeled sentences with string labels, including the
/// `joy` alias for Happiness and an unmappable `shame` class.
pub fn generate_ood(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = stream_rng(seed, "synth/ood");
    let classes = ["sadness", "anger", "fear", "joy", "shame"];
    (0..n)
        .map(|i| {
            let name = classes[i % classes.len()];
            let label = match name {
                "sadness" => EmotionLabel::Sadness,
                "anger" => EmotionLabel::Anger,
                "fear" => EmotionLabel::Fear,
                _ => EmotionLabel::Happiness,
            };
            (compose_text(label, &mut rng), name.to_string())
        })
        .collect()
}

/// Template sentences in the "I felt ... when ..." shape whose emotion slot
/// holds a lexicon marker, for exercising the slot-masking preparation.
pub fn generate_templates(n: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = stream_rng(seed, "synth/templates");
    let clauses = [
        "the results came back",
        "my friend moved away",
        "the door slammed shut",
        "the trip was announced",
        "the lights went out",
    ];
    (0..n)
        .map(|i| {
            let label = EmotionLabel::ALL[i % EmotionLabel::ALL.len()];
            let marker = marker_words(label)
                .choose(&mut rng)
                .expect("marker")
                .to_string();
            let clause = clauses.choose(&mut rng).expect("clause");
            let name = match label {
                EmotionLabel::Sadness => "sadness",
                EmotionLabel::Anger => "anger",
                EmotionLabel::Fear => "fear",
                EmotionLabel::Affection => "affection",
                EmotionLabel::Happiness => "joy",
            };
            (
                format!("I felt {marker} when {clause}"),
                name.to_string(),
            )
        })
        .collect()
}
