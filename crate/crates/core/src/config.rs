//! The experiment configuration file: one TOML document that pins every
//! knob of a run. The file's hash is recorded into every artifact the run
//! produces, so results always trace back to their exact configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emlm::MaskingConfig;
use crate::error::{Error, Result};
use crate::model::trainer::TrainConfig;
use crate::nn::EncoderConfig;
use crate::seeding::derive_seed;
use crate::splits::SplitSpec;

/// Inputs and the artifact root.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PathsConfig {
    /// Raw posts, one JSON object per line.
    pub corpus: PathBuf,
    /// Emotion lexicon, tab-separated `word<TAB>category` lines.
    pub lexicon: PathBuf,
    /// Directory that receives all artifacts of the run.
    pub run_dir: PathBuf,
    /// Optional JSON object of `{"Tag": "Label"}` overriding the default
    /// mood-tag mapping.
    #[serde(default)]
    pub tag_map: Option<PathBuf>,
}

/// Cleaning-pipeline knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(default)]
pub struct CorpusOptions {
    pub min_words: usize,
    pub meme_user_threshold: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            min_words: 3,
            meme_user_threshold: 10,
        }
    }
}

/// One out-of-domain evaluation set: JSONL records of `{text, label}`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct OodSet {
    pub name: String,
    pub path: PathBuf,
}

/// Evaluation knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvalOptions {
    /// Bootstrap resamples per confidence interval.
    pub replicates: usize,
    /// Confidence level of the intervals.
    pub level: f64,
    /// Misclassified posts sampled per gold label for inspection.
    pub error_samples: usize,
    pub ood: Vec<OodSet>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            replicates: 1000,
            level: 0.95,
            error_samples: 5,
            ood: Vec::new(),
        }
    }
}

/// Everything a run needs. All sections except `paths` have defaults, so a
/// minimal file is just the three paths.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub corpus: CorpusOptions,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub masking: MaskingConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    /// Master seed. The split and training seeds are derived from it, so
    /// the per-section `seed` fields are overwritten during resolution.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    13
}

impl ExperimentConfig {
    pub fn from_toml_str(raw: &str) -> Result<Self> {
        toml::from_str(raw).map_err(|e| Error::Config(format!("config parse error: {e}")))
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&raw)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    /// A copy with all derived seeds filled in from the master seed.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.split.seed = derive_seed(self.seed, "split");
        cfg.train.seed = derive_seed(self.seed, "train");
        cfg
    }

    /// Check every knob and referenced path; reads nothing and writes
    /// nothing beyond existence checks.
    pub fn validate(&self) -> Result<()> {
        for (what, path) in [
            ("corpus", &self.paths.corpus),
            ("lexicon", &self.paths.lexicon),
        ] {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "{what} file not found: {}",
                    path.display()
                )));
            }
        }
        if let Some(tag_map) = &self.paths.tag_map {
            if !tag_map.is_file() {
                return Err(Error::Config(format!(
                    "tag map file not found: {}",
                    tag_map.display()
                )));
            }
        }
        for set in &self.eval.ood {
            if !set.path.is_file() {
                return Err(Error::Config(format!(
                    "out-of-domain set {} not found: {}",
                    set.name,
                    set.path.display()
                )));
            }
        }
        if self.corpus.min_words == 0 {
            return Err(Error::Config("min_words must be at least 1".into()));
        }
        self.masking.validate()?;
        self.train.validate()?;
        if self.eval.replicates == 0 {
            return Err(Error::Config("bootstrap replicates must be positive".into()));
        }
        if !(0.0 < self.eval.level && self.eval.level < 1.0) {
            return Err(Error::Config(format!(
                "confidence level must be in (0, 1), got {}",
                self.eval.level
            )));
        }
        if self.encoder.vocab_size <= crate::tokenizer::Vocab::NUM_SPECIALS as usize {
            return Err(Error::Config(format!(
                "encoder vocab size {} leaves no room for regular tokens",
                self.encoder.vocab_size
            )));
        }
        Ok(())
    }

    /// Hash of the resolved configuration; recorded in every artifact.
    pub fn hash(&self) -> String {
        let canonical =
            serde_json::to_string(&self.resolved()).expect("config serializes to JSON");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Version string stamped into run manifests: crate version plus the source
/// revision when the build happened inside a checkout.
pub fn code_version() -> String {
    format!(
        "{}+{}",
        env!("CARGO_PKG_VERSION"),
        option_env!("EMOCLASS_GIT_SHA").unwrap_or("unversioned")
    )
}
