//! NBSVM baseline: binarized unigram indicators scaled by Naive Bayes
//! log-count ratios, fed to a one-vs-rest linear max-margin classifier, with
//! the final weights interpolated toward their mean magnitude.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::lexicon::tokenize_words;
use crate::seeding::stream_rng;

/// Hyperparameters for NBSVM training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NbsvmConfig {
    /// Keep at most this many unigrams (by document frequency, ties broken
    /// lexicographically).
    pub vocab_size: usize,
    /// Additive smoothing for the log-count ratios.
    pub alpha: f64,
    /// Interpolation weight toward the mean magnitude.
    pub beta: f64,
    /// Regularization constant of the margin objective.
    pub cost: f64,
    /// Maximum full passes of dual coordinate descent.
    pub max_sweeps: usize,
    /// Stop once the largest projected-gradient violation in a sweep drops
    /// below this.
    pub tolerance: f64,
    /// Seed for the per-sweep coordinate permutation.
    pub seed: u64,
}

impl Default for NbsvmConfig {
    fn default() -> Self {
        NbsvmConfig {
            vocab_size: 64_000,
            alpha: 1.0,
            beta: 0.25,
            cost: 1.0,
            max_sweeps: 1000,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// One binary one-vs-rest classifier.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinaryNbsvm {
    pub label: EmotionLabel,
    /// Log-count ratio per vocabulary word.
    pub ratios: Vec<f64>,
    /// Interpolated weights per vocabulary word.
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BinaryNbsvm {
    /// Decision score for a binarized set of vocabulary indices.
    pub fn score(&self, indices: &[usize]) -> f64 {
        let mut s = self.bias;
        for &j in indices {
            s += self.ratios[j] * self.weights[j];
        }
        s
    }
}

/// The full one-vs-rest model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NbsvmModel {
    /// Vocabulary in rank order (document frequency descending, then
    /// lexicographic).
    pub vocab: Vec<String>,
    /// Binary models in the fixed label order.
    pub models: Vec<BinaryNbsvm>,
    pub config: NbsvmConfig,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

/// Rank unigrams by the number of documents containing them (descending),
/// breaking ties lexicographically, and keep the top `vocab_size`. Document
/// frequency (rather than raw token count) makes the ranking invariant to
/// repeating a word inside one document, matching the binarized features.
pub fn build_vocab(texts: &[String], vocab_size: usize) -> Vec<String> {
    let mut doc_freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        let unique: BTreeSet<String> = tokenize_words(text).into_iter().collect();
        for word in unique {
            *doc_freq.entry(word).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = doc_freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(vocab_size);
    ranked.into_iter().map(|(w, _)| w).collect()
}

/// Smoothed log-count ratio: with p = alpha + pos and q = alpha + neg,
/// r = log((p / ||p||_1) / (q / ||q||_1)) elementwise.
pub fn nb_log_count_ratio(pos_counts: &[f64], neg_counts: &[f64], alpha: f64) -> Vec<f64> {
    assert_eq!(pos_counts.len(), neg_counts.len());
    let p: Vec<f64> = pos_counts.iter().map(|c| alpha + c).collect();
    let q: Vec<f64> = neg_counts.iter().map(|c| alpha + c).collect();
    let p_norm: f64 = p.iter().sum();
    let q_norm: f64 = q.iter().sum();
    p.iter()
        .zip(q.iter())
        .map(|(pi, qi)| ((pi / p_norm) / (qi / q_norm)).ln())
        .collect()
}

/// Sorted, deduplicated vocabulary indices of the words in `text`.
fn binarized_indices(index: &HashMap<String, usize>, text: &str) -> Vec<usize> {
    let set: BTreeSet<usize> = tokenize_words(text)
        .iter()
        .filter_map(|w| index.get(w).copied())
        .collect();
    set.into_iter().collect()
}

/// Dual coordinate descent for the L2-regularized hinge-loss objective
/// min_w 0.5 w.w + cost * sum_i max(0, 1 - y_i w.x_i), where document i has
/// value `values[j]` at each feature in `docs[i]` plus an implicit constant
/// feature of 1 (the bias). Returns the weight vector of length
/// `values.len() + 1`, bias last.
fn train_linear_svm(
    docs: &[Vec<usize>],
    values: &[f64],
    labels: &[f64],
    cost: f64,
    max_sweeps: usize,
    tolerance: f64,
    rng: &mut impl rand::Rng,
) -> Vec<f64> {
    let n = docs.len();
    let dim = values.len() + 1;
    let bias_idx = dim - 1;
    let mut w = vec![0.0f64; dim];
    let mut alpha = vec![0.0f64; n];
    // Q_ii = x_i . x_i, at least 1 because of the constant bias feature.
    let q_diag: Vec<f64> = docs
        .iter()
        .map(|doc| 1.0 + doc.iter().map(|&j| values[j] * values[j]).sum::<f64>())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..max_sweeps {
        order.shuffle(rng);
        let mut worst = 0.0f64;
        for &i in &order {
            let mut wx = w[bias_idx];
            for &j in &docs[i] {
                wx += w[j] * values[j];
            }
            let g = labels[i] * wx - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= cost {
                g.max(0.0)
            } else {
                g
            };
            worst = worst.max(pg.abs());
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q_diag[i]).clamp(0.0, cost);
                let delta = (alpha[i] - old) * labels[i];
                if delta != 0.0 {
                    for &j in &docs[i] {
                        w[j] += delta * values[j];
                    }
                    w[bias_idx] += delta;
                }
            }
        }
        if worst < tolerance {
            break;
        }
    }
    w
}

impl NbsvmModel {
    /// Rebuild the word -> index map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    /// Train one binary classifier per label present in the training set.
    ///
    /// Requires at least two distinct labels, each with at least two
    /// examples.
    pub fn train(posts: &[(String, EmotionLabel)], config: NbsvmConfig) -> Result<Self> {
        let mut per_label: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, label) in posts {
            *per_label.entry(label.index()).or_insert(0) += 1;
        }
        if per_label.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "nbsvm needs at least 2 distinct labels, got {}",
                per_label.len()
            )));
        }
        for (idx, count) in &per_label {
            if *count < 2 {
                return Err(Error::InvalidInput(format!(
                    "label {} has {} example(s); at least 2 required",
                    EmotionLabel::ALL[*idx].name(),
                    count
                )));
            }
        }

        let texts: Vec<String> = posts.iter().map(|(t, _)| t.clone()).collect();
        let vocab = build_vocab(&texts, config.vocab_size);
        if vocab.is_empty() {
            return Err(Error::InvalidInput(
                "nbsvm vocabulary is empty; training texts contain no words".into(),
            ));
        }
        let index: HashMap<String, usize> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let docs: Vec<Vec<usize>> = posts
            .iter()
            .map(|(t, _)| binarized_indices(&index, t))
            .collect();

        let mut models = Vec::new();
        for target in EmotionLabel::ALL {
            if !per_label.contains_key(&target.index()) {
                continue;
            }
            let mut pos = vec![0.0f64; vocab.len()];
            let mut neg = vec![0.0f64; vocab.len()];
            for (doc, (_, label)) in docs.iter().zip(posts.iter()) {
                let bucket = if *label == target { &mut pos } else { &mut neg };
                for &j in doc {
                    bucket[j] += 1.0;
                }
            }
            let ratios = nb_log_count_ratio(&pos, &neg, config.alpha);
            let labels: Vec<f64> = posts
                .iter()
                .map(|(_, l)| if *l == target { 1.0 } else { -1.0 })
                .collect();
            let mut rng = stream_rng(config.seed, &format!("nbsvm/{}", target.name()));
            let raw = train_linear_svm(
                &docs,
                &ratios,
                &labels,
                config.cost,
                config.max_sweeps,
                config.tolerance,
                &mut rng,
            );
            // Interpolate the vocabulary weights toward their mean magnitude;
            // the bias is left as learned. With beta = 1 every weight
            // collapses to the mean magnitude (scores stay finite).
            let mean_magnitude: f64 =
                raw[..vocab.len()].iter().map(|w| w.abs()).sum::<f64>() / vocab.len() as f64;
            let weights: Vec<f64> = raw[..vocab.len()]
                .iter()
                .map(|w| config.beta * mean_magnitude + (1.0 - config.beta) * w)
                .collect();
            models.push(BinaryNbsvm {
                label: target,
                ratios,
                weights,
                bias: raw[vocab.len()],
            });
        }

        Ok(NbsvmModel {
            vocab,
            models,
            config,
            index,
        })
    }

    /// Per-label decision scores in model order.
    pub fn scores(&self, text: &str) -> Vec<(EmotionLabel, f64)> {
        let indices = binarized_indices(&self.index, text);
        self.models
            .iter()
            .map(|m| (m.label, m.score(&indices)))
            .collect()
    }

    /// One-vs-rest argmax; ties resolve to the label earliest in the fixed
    /// order, so an all-zero score vector predicts Sadness.
    pub fn predict(&self, text: &str) -> EmotionLabel {
        let scores = self.scores(text);
        let mut best = scores[0];
        for &(label, score) in &scores[1..] {
            if score > best.1 {
                best = (label, score);
            }
        }
        best.0
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let json = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut model: NbsvmModel = serde_json::from_str(&raw).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        model.rebuild_index();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_class_corpus() -> Vec<(String, EmotionLabel)> {
        vec![
            ("gloom dusk sorrow".to_string(), EmotionLabel::Sadness),
            ("gloom sorrow quiet".to_string(), EmotionLabel::Sadness),
            ("dusk gloom rain".to_string(), EmotionLabel::Sadness),
            ("spark cheer sunshine".to_string(), EmotionLabel::Happiness),
            ("cheer spark delight".to_string(), EmotionLabel::Happiness),
            ("sunshine cheer glee".to_string(), EmotionLabel::Happiness),
        ]
    }

    #[test]
    fn log_count_ratio_matches_worked_example() {
        // vocab {good, bad}; one positive doc with "good", one negative with
        // "bad"; alpha 1 gives p = (2,1)/3, q = (1,2)/3, r = (ln 2, -ln 2).
        let r = nb_log_count_ratio(&[1.0, 0.0], &[0.0, 1.0], 1.0);
        let ln2 = 0.6931471805599453;
        assert!((r[0] - ln2).abs() < 1e-12);
        assert!((r[1] + ln2).abs() < 1e-12);
    }

    #[test]
    fn log_count_ratio_is_zero_for_identical_counts() {
        let r = nb_log_count_ratio(&[3.0, 1.0, 4.0], &[3.0, 1.0, 4.0], 1.0);
        for v in r {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn log_count_ratio_vanishes_under_heavy_smoothing() {
        let r = nb_log_count_ratio(&[5.0, 0.0], &[0.0, 3.0], 1e6);
        for v in r {
            assert!(v.abs() < 1e-5, "ratio {v} not flattened by smoothing");
        }
    }

    #[test]
    fn vocab_ranks_by_document_frequency_then_word() {
        let texts = vec![
            "apple banana".to_string(),
            "apple cherry".to_string(),
            "apple banana banana".to_string(),
        ];
        let vocab = build_vocab(&texts, 10);
        // apple in 3 docs, banana in 2, cherry in 1; repetition inside a
        // document does not raise banana's rank.
        assert_eq!(vocab, vec!["apple", "banana", "cherry"]);
    }

    #[test]
    fn vocab_truncation_drops_lowest_ranked_word() {
        let texts = vec![
            "apple banana".to_string(),
            "apple cherry".to_string(),
            "apple banana".to_string(),
        ];
        let vocab = build_vocab(&texts, 2);
        assert_eq!(vocab, vec!["apple", "banana"]);
        let model = NbsvmModel::train(
            &[
                ("apple banana".to_string(), EmotionLabel::Sadness),
                ("apple banana".to_string(), EmotionLabel::Sadness),
                ("apple cherry".to_string(), EmotionLabel::Happiness),
                ("apple cherry".to_string(), EmotionLabel::Happiness),
            ],
            NbsvmConfig {
                vocab_size: 2,
                ..NbsvmConfig::default()
            },
        )
        .expect("train");
        assert!(!model.vocab.contains(&"cherry".to_string()));
    }

    #[test]
    fn separable_corpus_reaches_perfect_training_f1() {
        let corpus = two_class_corpus();
        let model = NbsvmModel::train(&corpus, NbsvmConfig::default()).expect("train");
        for (text, gold) in &corpus {
            assert_eq!(model.predict(text), *gold, "misclassified {text:?}");
        }
    }

    #[test]
    fn all_zero_scores_tie_to_first_label_in_order() {
        let mut model = NbsvmModel::train(&two_class_corpus(), NbsvmConfig::default()).unwrap();
        for m in &mut model.models {
            m.weights.iter_mut().for_each(|w| *w = 0.0);
            m.bias = 0.0;
        }
        // Empty text carries no features either way; with zeroed score
        // vectors every label ties and the first in order wins.
        assert_eq!(model.predict(""), EmotionLabel::Sadness);
    }

    #[test]
    fn prediction_ignores_token_order() {
        let model = NbsvmModel::train(&two_class_corpus(), NbsvmConfig::default()).unwrap();
        let a = model.scores("gloom cheer sorrow");
        let b = model.scores("sorrow gloom cheer");
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_invariant_to_duplicated_tokens_within_a_document() {
        let mut duplicated = two_class_corpus();
        duplicated[0].0 = "gloom gloom dusk dusk sorrow sorrow gloom".to_string();
        let base = NbsvmModel::train(&two_class_corpus(), NbsvmConfig::default()).unwrap();
        let dup = NbsvmModel::train(&duplicated, NbsvmConfig::default()).unwrap();
        assert_eq!(base.vocab, dup.vocab);
        for (m0, m1) in base.models.iter().zip(dup.models.iter()) {
            assert_eq!(m0.ratios, m1.ratios);
            assert_eq!(m0.weights, m1.weights);
            assert_eq!(m0.bias, m1.bias);
        }
    }

    #[test]
    fn beta_one_collapses_weights_to_mean_magnitude() {
        let config = NbsvmConfig {
            beta: 1.0,
            ..NbsvmConfig::default()
        };
        let model = NbsvmModel::train(&two_class_corpus(), config).expect("train");
        for m in &model.models {
            let first = m.weights[0];
            assert!(first.is_finite());
            for w in &m.weights {
                assert!((w - first).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_single_label_corpora() {
        let posts = vec![
            ("gloom dusk".to_string(), EmotionLabel::Sadness),
            ("sorrow rain".to_string(), EmotionLabel::Sadness),
        ];
        assert!(NbsvmModel::train(&posts, NbsvmConfig::default()).is_err());
    }

    #[test]
    fn rejects_labels_with_one_example() {
        let posts = vec![
            ("gloom dusk".to_string(), EmotionLabel::Sadness),
            ("sorrow rain".to_string(), EmotionLabel::Sadness),
            ("cheer glee".to_string(), EmotionLabel::Happiness),
        ];
        let err = NbsvmModel::train(&posts, NbsvmConfig::default()).unwrap_err();
        assert!(err.to_string().contains("Happiness"));
    }

    #[test]
    fn save_load_round_trips_predictions() {
        let model = NbsvmModel::train(&two_class_corpus(), NbsvmConfig::default()).unwrap();
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("nbsvm.json");
        model.save(&path).expect("save");
        let back = NbsvmModel::load(&path).expect("load");
        for (text, _) in &two_class_corpus() {
            assert_eq!(model.scores(text), back.scores(text));
        }
    }

    proptest! {
        #[test]
        fn duplicating_any_document_tokens_never_changes_decisions(
            dup_doc in 0usize..6,
            repeats in 2usize..5,
        ) {
            let base_corpus = two_class_corpus();
            let mut corpus = base_corpus.clone();
            let doubled = vec![corpus[dup_doc].0.clone(); repeats].join(" ");
            corpus[dup_doc].0 = doubled;
            let base = NbsvmModel::train(&base_corpus, NbsvmConfig::default()).unwrap();
            let dup = NbsvmModel::train(&corpus, NbsvmConfig::default()).unwrap();
            for (text, _) in &base_corpus {
                prop_assert_eq!(base.predict(text), dup.predict(text));
            }
        }
    }
}
