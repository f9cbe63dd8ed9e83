//! Evaluation: per-class and macro F1, percentile-bootstrap confidence
//! intervals, cross-dataset average ranks, and seeded error sampling.

pub mod ood;
pub mod report;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::seeding::stream_rng;

/// Per-class F1 plus the macro average, on a 0-100 scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F1Report {
    /// label name -> F1 percent, in label-set order.
    pub per_class: IndexMap<String, f64>,
    pub macro_f1: f64,
}

fn check_labels(golds: &[EmotionLabel], preds: &[EmotionLabel], label_set: &[EmotionLabel]) -> Result<()> {
    if golds.len() != preds.len() {
        return Err(Error::Eval(format!(
            "gold/prediction length mismatch: {} vs {}",
            golds.len(),
            preds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::Eval("empty evaluation set".to_string()));
    }
    if label_set.is_empty() {
        return Err(Error::Eval("empty label set".to_string()));
    }
    for l in golds.iter().chain(preds.iter()) {
        if !label_set.contains(l) {
            return Err(Error::Eval(format!("label {l} outside the declared label set")));
        }
    }
    Ok(())
}

/// Compute per-class F1 and macro F1 over the declared label set.
///
/// A class with zero precision+recall (e.g. absent from both gold and
/// predictions) contributes F1 = 0, and still counts in the macro average.
pub fn macro_f1(
    golds: &[EmotionLabel],
    preds: &[EmotionLabel],
    label_set: &[EmotionLabel],
) -> Result<F1Report> {
    check_labels(golds, preds, label_set)?;
    let mut per_class = IndexMap::new();
    let mut sum = 0.0;
    for &label in label_set {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&g, &p) in golds.iter().zip(preds) {
            match (g == label, p == label) {
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
        per_class.insert(label.name().to_string(), f1);
        sum += f1;
    }
    Ok(F1Report {
        macro_f1: sum / label_set.len() as f64,
        per_class,
    })
}

/// One metric's percentile confidence interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Ci {
    pub lo: f64,
    pub hi: f64,
}

/// Point estimates plus bootstrap CIs for per-class and macro F1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub point: F1Report,
    /// metric name ("macro_f1" or a label name) -> interval.
    pub ci: IndexMap<String, Ci>,
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

/// Linear-interpolation quantile of pre-sorted values (the common "type 7"
/// definition: h = (n-1)q).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Percentile bootstrap over instance resampling.
///
/// Draws `replicates` resamples of the instance indices (with replacement)
/// from a ChaCha stream seeded by `seed`; each resample is reused for every
/// reported metric so the intervals are mutually consistent. The interval is
/// the (alpha/2, 1-alpha/2) percentile pair at the given confidence level.
pub fn bootstrap_ci(
    golds: &[EmotionLabel],
    preds: &[EmotionLabel],
    label_set: &[EmotionLabel],
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapReport> {
    check_labels(golds, preds, label_set)?;
    if replicates == 0 {
        return Err(Error::Eval("bootstrap needs at least one replicate".to_string()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Eval(format!("confidence level must be in (0,1), got {level}")));
    }
    let point = macro_f1(golds, preds, label_set)?;
    let n = golds.len();

    let metric_names: Vec<String> = point
        .per_class
        .keys()
        .cloned()
        .chain(std::iter::once("macro_f1".to_string()))
        .collect();
    let mut samples: IndexMap<String, Vec<f64>> = metric_names
        .iter()
        .map(|m| (m.clone(), Vec::with_capacity(replicates)))
        .collect();

    let mut rng = stream_rng(seed, "bootstrap");
    let mut g = vec![EmotionLabel::Sadness; n];
    let mut p = vec![EmotionLabel::Sadness; n];
    for _ in 0..replicates {
        for slot in 0..n {
            let pick = rng.gen_range(0..n);
            g[slot] = golds[pick];
            p[slot] = preds[pick];
        }
        let rep = macro_f1(&g, &p, label_set)?;
        for (name, f1) in rep.per_class.iter() {
            samples.get_mut(name).expect("metric slot").push(*f1);
        }
        samples.get_mut("macro_f1").expect("macro slot").push(rep.macro_f1);
    }

    let alpha = 1.0 - level;
    let mut ci = IndexMap::new();
    for name in metric_names {
        let mut values = samples.shift_remove(&name).expect("samples");
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric"));
        ci.insert(
            name,
            Ci {
                lo: quantile_sorted(&values, alpha / 2.0),
                hi: quantile_sorted(&values, 1.0 - alpha / 2.0),
            },
        );
    }

    Ok(BootstrapReport {
        point,
        ci,
        replicates,
        level,
        seed,
    })
}

/// A model-by-dataset score matrix for rank aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    /// scores[model_index][dataset_index]
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.datasets.is_empty() {
            return Err(Error::Eval("score matrix needs at least one model and dataset".into()));
        }
        if self.scores.len() != self.models.len() {
            return Err(Error::Eval("score matrix row count != model count".into()));
        }
        for (m, row) in self.models.iter().zip(&self.scores) {
            if row.len() != self.datasets.len() {
                return Err(Error::Eval(format!(
                    "model {m} has {} scores for {} datasets (missing cells are not allowed)",
                    row.len(),
                    self.datasets.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Eval(format!("model {m} has a non-finite score")));
            }
        }
        Ok(())
    }
}

/// Average rank of each model across datasets. Rank 1 is best (highest
/// score); tied scores share the mean of their covered ranks.
pub fn average_rank(matrix: &ScoreMatrix) -> Result<IndexMap<String, f64>> {
    matrix.validate()?;
    let n_models = matrix.models.len();
    let mut totals = vec![0.0f64; n_models];
    for d in 0..matrix.datasets.len() {
        let mut order: Vec<usize> = (0..n_models).collect();
        order.sort_by(|&a, &b| {
            matrix.scores[b][d]
                .partial_cmp(&matrix.scores[a][d])
                .expect("finite scores")
        });
        // Walk tie groups and assign the mean covered rank to each member.
        let mut i = 0;
        while i < n_models {
            let mut j = i;
            while j + 1 < n_models
                && matrix.scores[order[j + 1]][d] == matrix.scores[order[i]][d]
            {
                j += 1;
            }
            let mean_rank = (i + 1 + j + 1) as f64 / 2.0;
            for &m in &order[i..=j] {
                totals[m] += mean_rank;
            }
            i = j + 1;
        }
    }
    let n_datasets = matrix.datasets.len() as f64;
    Ok(matrix
        .models
        .iter()
        .cloned()
        .zip(totals.into_iter().map(|t| t / n_datasets))
        .collect())
}

/// A prediction joined with its gold label, for error inspection.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PredictionRecord {
    pub id: String,
    pub text: String,
    pub gold: EmotionLabel,
    pub predicted: EmotionLabel,
}

/// Deterministically sample up to `per_label` misclassified posts per gold
/// label. Groups with fewer errors are returned whole. Output preserves
/// label order, then input order within each label.
pub fn sample_errors(
    records: &[PredictionRecord],
    per_label: usize,
    seed: u64,
) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for &label in &EmotionLabel::ALL {
        let group: Vec<&PredictionRecord> = records
            .iter()
            .filter(|r| r.gold == label && r.predicted != r.gold)
            .collect();
        if group.len() <= per_label {
            out.extend(group.into_iter().cloned());
            continue;
        }
        let mut rng = stream_rng(seed, &format!("errors/{}", label.name()));
        let mut idx: Vec<usize> = (0..group.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut rng);
        let mut chosen: Vec<usize> = idx[..per_label].to_vec();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| group[i].clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionLabel::*;

    #[test]
    fn worked_example_matches_hand_computation() {
        // golds [S,S,A,A], preds [S,A,A,A]:
        // Sadness P=1, R=0.5 -> F1 66.67; Anger P=2/3, R=1 -> F1 80.
        let golds = [Sadness, Sadness, Anger, Anger];
        let preds = [Sadness, Anger, Anger, Anger];
        let rep = macro_f1(&golds, &preds, &[Sadness, Anger]).expect("f1");
        assert!((rep.per_class["Sadness"] - 200.0 / 3.0).abs() < 1e-9);
        assert!((rep.per_class["Anger"] - 80.0).abs() < 1e-9);
        assert!((rep.macro_f1 - 220.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn all_correct_is_100() {
        let golds = [Sadness, Anger, Fear, Affection, Happiness];
        let rep = macro_f1(&golds, &golds, &EmotionLabel::ALL).expect("f1");
        assert_eq!(rep.macro_f1, 100.0);
        assert!(rep.per_class.values().all(|&v| v == 100.0));
    }

    #[test]
    fn absent_class_scores_zero_but_counts() {
        // Fear never appears in gold or predictions.
        let golds = [Sadness, Anger];
        let preds = [Sadness, Anger];
        let rep = macro_f1(&golds, &preds, &[Sadness, Anger, Fear]).expect("f1");
        assert_eq!(rep.per_class["Fear"], 0.0);
        assert!((rep.macro_f1 - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn label_outside_set_is_error() {
        let golds = [Sadness, Happiness];
        let preds = [Sadness, Happiness];
        assert!(macro_f1(&golds, &preds, &[Sadness, Anger]).is_err());
    }

    #[test]
    fn length_mismatch_and_empty_are_errors() {
        assert!(macro_f1(&[Sadness], &[], &EmotionLabel::ALL).is_err());
        assert!(macro_f1(&[], &[], &EmotionLabel::ALL).is_err());
    }

    #[test]
    fn brute_force_oracle_agreement_on_random_instances() {
        // Independent oracle: per-class precision/recall computed with
        // straight loops, then F1 = 2PR/(P+R).
        fn oracle(golds: &[EmotionLabel], preds: &[EmotionLabel], label: EmotionLabel) -> f64 {
            let tp = golds
                .iter()
                .zip(preds)
                .filter(|(g, p)| **g == label && **p == label)
                .count() as f64;
            let pred_pos = preds.iter().filter(|p| **p == label).count() as f64;
            let gold_pos = golds.iter().filter(|g| **g == label).count() as f64;
            if pred_pos == 0.0 || gold_pos == 0.0 {
                if tp == 0.0 {
                    return 0.0;
                }
            }
            let precision = if pred_pos == 0.0 { 0.0 } else { tp / pred_pos };
            let recall = if gold_pos == 0.0 { 0.0 } else { tp / gold_pos };
            if precision + recall == 0.0 {
                0.0
            } else {
                100.0 * 2.0 * precision * recall / (precision + recall)
            }
        }

        let mut rng = stream_rng(99, "oracle");
        for _ in 0..50 {
            let n = rng.gen_range(1..=40);
            let golds: Vec<EmotionLabel> =
                (0..n).map(|_| EmotionLabel::ALL[rng.gen_range(0..5)]).collect();
            let preds: Vec<EmotionLabel> =
                (0..n).map(|_| EmotionLabel::ALL[rng.gen_range(0..5)]).collect();
            let rep = macro_f1(&golds, &preds, &EmotionLabel::ALL).expect("f1");
            let mut sum = 0.0;
            for &label in &EmotionLabel::ALL {
                let expect = oracle(&golds, &preds, label);
                assert!(
                    (rep.per_class[label.name()] - expect).abs() < 1e-9,
                    "label {label} mismatch"
                );
                sum += expect;
            }
            assert!((rep.macro_f1 - sum / 5.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bootstrap_degenerate_all_correct_is_exact_100() {
        // Every resample of an all-correct single-class fixture is itself
        // all-correct, so the interval collapses to [100, 100].
        let golds = vec![Sadness, Sadness];
        let rep = bootstrap_ci(&golds, &golds, &[Sadness], 4, 0.95, 7).expect("ci");
        assert_eq!(rep.ci["macro_f1"], Ci { lo: 100.0, hi: 100.0 });
        assert_eq!(rep.ci["Sadness"], Ci { lo: 100.0, hi: 100.0 });
        assert_eq!(rep.point.macro_f1, 100.0);
    }

    #[test]
    fn bootstrap_all_correct_multiclass_point_is_100() {
        // With several classes a resample can drop a class entirely (that
        // class then scores 0 under the full-label-set convention), so only
        // the upper end and the point estimate are pinned at 100.
        let golds = vec![Sadness, Anger, Fear, Happiness, Affection, Sadness];
        let rep = bootstrap_ci(&golds, &golds, &EmotionLabel::ALL, 200, 0.95, 7).expect("ci");
        assert_eq!(rep.point.macro_f1, 100.0);
        assert!(rep.ci["macro_f1"].hi <= 100.0 + 1e-9);
        assert!(rep.ci["macro_f1"].lo <= rep.ci["macro_f1"].hi);
    }

    #[test]
    fn bootstrap_matches_enumerated_resamples_small_case() {
        // n=2, B=4: replay the identical RNG stream and recompute the
        // percentile interval independently.
        let golds = [Sadness, Anger];
        let preds = [Sadness, Sadness];
        let labels = [Sadness, Anger];
        let b = 4;
        let seed = 123;
        let rep = bootstrap_ci(&golds, &preds, &labels, b, 0.95, seed).expect("ci");

        let mut rng = stream_rng(seed, "bootstrap");
        let mut macro_samples = Vec::new();
        for _ in 0..b {
            let mut g = Vec::new();
            let mut p = Vec::new();
            for _ in 0..2 {
                let pick = rng.gen_range(0..2usize);
                g.push(golds[pick]);
                p.push(preds[pick]);
            }
            macro_samples.push(macro_f1(&g, &p, &labels).unwrap().macro_f1);
        }
        macro_samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect_lo = quantile_sorted(&macro_samples, 0.025);
        let expect_hi = quantile_sorted(&macro_samples, 0.975);
        assert!((rep.ci["macro_f1"].lo - expect_lo).abs() < 1e-12);
        assert!((rep.ci["macro_f1"].hi - expect_hi).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_interval_contains_point_estimate_on_mixed_data() {
        let mut rng = stream_rng(5, "mix");
        let golds: Vec<EmotionLabel> =
            (0..120).map(|_| EmotionLabel::ALL[rng.gen_range(0..5)]).collect();
        // ~70% correct predictions.
        let preds: Vec<EmotionLabel> = golds
            .iter()
            .map(|&g| {
                if rng.gen_bool(0.7) {
                    g
                } else {
                    EmotionLabel::ALL[rng.gen_range(0..5)]
                }
            })
            .collect();
        for seed in [1u64, 2, 3] {
            let rep = bootstrap_ci(&golds, &preds, &EmotionLabel::ALL, 500, 0.95, seed)
                .expect("ci");
            let m = rep.point.macro_f1;
            let ci = rep.ci["macro_f1"];
            assert!(ci.lo <= m && m <= ci.hi, "seed {seed}: {m} not in [{}, {}]", ci.lo, ci.hi);
            assert!(ci.lo <= ci.hi);
        }
    }

    #[test]
    fn higher_level_widens_interval() {
        let mut rng = stream_rng(6, "mix");
        let golds: Vec<EmotionLabel> =
            (0..80).map(|_| EmotionLabel::ALL[rng.gen_range(0..5)]).collect();
        let preds: Vec<EmotionLabel> = golds
            .iter()
            .map(|&g| if rng.gen_bool(0.6) { g } else { EmotionLabel::ALL[rng.gen_range(0..5)] })
            .collect();
        let narrow = bootstrap_ci(&golds, &preds, &EmotionLabel::ALL, 400, 0.80, 9).unwrap();
        let wide = bootstrap_ci(&golds, &preds, &EmotionLabel::ALL, 400, 0.99, 9).unwrap();
        let n = narrow.ci["macro_f1"];
        let w = wide.ci["macro_f1"];
        assert!(w.hi - w.lo >= n.hi - n.lo);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let golds = [Sadness, Anger, Fear, Sadness, Happiness, Anger];
        let preds = [Sadness, Fear, Fear, Anger, Happiness, Anger];
        let a = bootstrap_ci(&golds, &preds, &EmotionLabel::ALL, 100, 0.95, 42).unwrap();
        let b = bootstrap_ci(&golds, &preds, &EmotionLabel::ALL, 100, 0.95, 42).unwrap();
        assert_eq!(a.ci, b.ci);
    }

    #[test]
    fn quantile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert!((quantile_sorted(&v, 0.025) - 1.075).abs() < 1e-12);
    }

    #[test]
    fn average_rank_all_best_row_is_one() {
        let m = ScoreMatrix {
            models: vec!["a".into(), "b".into(), "c".into()],
            datasets: vec!["d1".into(), "d2".into(), "d3".into()],
            scores: vec![
                vec![90.0, 80.0, 70.0],
                vec![50.0, 60.0, 40.0],
                vec![10.0, 20.0, 30.0],
            ],
        };
        let ranks = average_rank(&m).expect("ranks");
        assert_eq!(ranks["a"], 1.0);
        assert_eq!(ranks["b"], 2.0);
        assert_eq!(ranks["c"], 3.0);
    }

    #[test]
    fn ties_share_mean_rank() {
        let m = ScoreMatrix {
            models: vec!["a".into(), "b".into(), "c".into()],
            datasets: vec!["d1".into()],
            scores: vec![vec![70.0], vec![70.0], vec![10.0]],
        };
        let ranks = average_rank(&m).expect("ranks");
        assert_eq!(ranks["a"], 1.5);
        assert_eq!(ranks["b"], 1.5);
        assert_eq!(ranks["c"], 3.0);
    }

    #[test]
    fn missing_cells_are_an_error() {
        let m = ScoreMatrix {
            models: vec!["a".into(), "b".into()],
            datasets: vec!["d1".into(), "d2".into()],
            scores: vec![vec![1.0, 2.0], vec![1.0]],
        };
        assert!(average_rank(&m).is_err());
    }

    fn record(i: usize, gold: EmotionLabel, predicted: EmotionLabel) -> PredictionRecord {
        PredictionRecord {
            id: format!("r{i}"),
            text: format!("text {i}"),
            gold,
            predicted,
        }
    }

    #[test]
    fn samples_up_to_per_label_errors() {
        let mut records = Vec::new();
        for i in 0..30 {
            records.push(record(i, Sadness, Anger)); // 30 sadness errors
        }
        for i in 30..34 {
            records.push(record(i, Fear, Sadness)); // 4 fear errors
        }
        for i in 34..40 {
            records.push(record(i, Anger, Anger)); // correct, ignored
        }
        let sampled = sample_errors(&records, 10, 1);
        let sad: Vec<_> = sampled.iter().filter(|r| r.gold == Sadness).collect();
        let fear: Vec<_> = sampled.iter().filter(|r| r.gold == Fear).collect();
        assert_eq!(sad.len(), 10);
        assert_eq!(fear.len(), 4);
        assert_eq!(sampled.len(), 14);
        // Deterministic for a fixed seed.
        assert_eq!(sample_errors(&records, 10, 1), sampled);
        assert_ne!(
            sample_errors(&records, 10, 2)
                .iter()
                .map(|r| r.id.clone())
                .collect::<Vec<_>>(),
            sampled.iter().map(|r| r.id.clone()).collect::<Vec<_>>()
        );
    }
}
