//! Emotion classification for short social-media text.
//!
//! The crate covers the full experimental loop: corpus cleaning, leakage-free
//! splits, an emotion lexicon, lexicon-guided masked-LM pretraining, probe
//! then fine-tune training with a joint contrastive objective, checkpoint
//! weight averaging, dictionary and NBSVM baselines, bootstrapped evaluation,
//! and perturbation-based token attribution.

pub mod attribution;
pub mod baselines;
pub mod config;
pub mod corpus;
pub mod emlm;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod jsonl;
pub mod label;
pub mod lexicon;
pub mod model;
pub mod nn;
pub mod seeding;
pub mod splits;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
pub use label::EmotionLabel;
