//! Perturbation-based local explanations of classifier predictions.
//!
//! The recipe: delete random subsets of whitespace tokens, score every
//! perturbed text with the model, weight each sample by its proximity to the
//! original (an exponential kernel over cosine distance between binary
//! presence vectors), and fit a weighted ridge surrogate whose coefficients
//! are the per-token importances for the target class.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::seeding::stream_rng;

/// Minimum allowed ridge strength; keeps the surrogate fit well-posed.
pub const MIN_RIDGE: f64 = 1e-6;

/// Per-token importances for one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// The class whose probability the surrogate models.
    pub target: EmotionLabel,
    /// Whitespace tokens of the original text, in order.
    pub tokens: Vec<String>,
    /// Signed surrogate coefficient per token (same order as `tokens`).
    pub weights: Vec<f64>,
    /// The model's probability vector on the unperturbed text.
    pub confidence: Vec<f64>,
    /// Perturbation samples actually scored (after drops).
    pub n_samples: usize,
    /// Samples the model failed to score.
    pub dropped: usize,
    pub seed: u64,
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting. The
/// systems here are small (tokens + 1) and ridge-regularized, hence
/// comfortably non-singular.
fn solve_linear(mut a: Array2<f64>, mut b: Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[[row, col]].abs() > a[[pivot, col]].abs() {
                pivot = row;
            }
        }
        if a[[pivot, col]].abs() < 1e-12 {
            return Err(Error::Eval("singular surrogate system".into()));
        }
        if pivot != col {
            for c in 0..n {
                let tmp = a[[col, c]];
                a[[col, c]] = a[[pivot, c]];
                a[[pivot, c]] = tmp;
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[[row, c]] -= factor * a[[col, c]];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[[row, c]] * x[c];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

/// Explain one prediction of `predict` on `text` for `target`.
///
/// `predict` maps a text to a probability vector over the five labels;
/// a scoring error on a perturbed sample drops that sample (counted in the
/// result) rather than failing the explanation. `kernel_width` defaults to
/// 0.75·√d for d tokens; `ridge` is the surrogate's L2 strength (intercept
/// unpenalized).
pub fn explain(
    mut predict: impl FnMut(&str) -> Result<Vec<f64>>,
    text: &str,
    target: EmotionLabel,
    n_samples: usize,
    kernel_width: Option<f64>,
    ridge: f64,
    seed: u64,
) -> Result<Explanation> {
    let tokens: Vec<String> = text.split_whitespace().map(|t| t.to_string()).collect();
    let d = tokens.len();
    if d == 0 {
        return Err(Error::InvalidInput(
            "cannot explain a text with no tokens".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    if ridge < MIN_RIDGE {
        return Err(Error::Config(format!(
            "ridge strength must be at least {MIN_RIDGE}, got {ridge}"
        )));
    }
    let kw = kernel_width.unwrap_or(0.75 * (d as f64).sqrt());
    if kw <= 0.0 {
        return Err(Error::Config(format!(
            "kernel width must be positive, got {kw}"
        )));
    }

    let confidence = predict(text)?;
    let sum: f64 = confidence.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Eval(format!(
            "model confidence sums to {sum}, not 1"
        )));
    }
    if target.index() >= confidence.len() {
        return Err(Error::Eval(format!(
            "model returned {} probabilities; class index {} out of range",
            confidence.len(),
            target.index()
        )));
    }

    let mut rng = stream_rng(seed, "explain");
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    let mut ys: Vec<f64> = Vec::with_capacity(n_samples);
    let mut sample_weights: Vec<f64> = Vec::with_capacity(n_samples);
    let mut dropped = 0usize;

    // Sample 0 is the unperturbed text; the rest remove k ~ U[1, d] tokens.
    rows.push(vec![1.0; d]);
    ys.push(confidence[target.index()]);
    sample_weights.push(1.0);
    for _ in 1..n_samples {
        let k = rng.gen_range(1..=d);
        let removed = rand::seq::index::sample(&mut rng, d, k);
        let mut presence = vec![1.0; d];
        for i in removed {
            presence[i] = 0.0;
        }
        let perturbed: Vec<&str> = tokens
            .iter()
            .zip(presence.iter())
            .filter(|(_, &p)| p == 1.0)
            .map(|(t, _)| t.as_str())
            .collect();
        let probs = match predict(&perturbed.join(" ")) {
            Ok(p) => p,
            Err(_) => {
                dropped += 1;
                continue;
            }
        };
        if target.index() >= probs.len() {
            dropped += 1;
            continue;
        }
        let present: f64 = presence.iter().sum();
        // Cosine similarity of a binary vector with all-ones is √(k/d).
        let distance = if present == 0.0 {
            1.0
        } else {
            1.0 - (present / d as f64).sqrt()
        };
        rows.push(presence);
        ys.push(probs[target.index()]);
        sample_weights.push((-(distance * distance) / (kw * kw)).exp());
    }

    // Weighted ridge on [intercept | presence]: (XᵀWX + λJ)β = XᵀWy with
    // J = identity except a zero for the intercept.
    let n = rows.len();
    let p = d + 1;
    let mut xtwx = Array2::<f64>::zeros((p, p));
    let mut xtwy = Array1::<f64>::zeros(p);
    for (row, (&y, &w)) in rows.iter().zip(ys.iter().zip(sample_weights.iter())) {
        let mut x = Vec::with_capacity(p);
        x.push(1.0);
        x.extend_from_slice(row);
        for i in 0..p {
            if x[i] == 0.0 {
                continue;
            }
            for j in 0..p {
                xtwx[[i, j]] += w * x[i] * x[j];
            }
            xtwy[i] += w * x[i] * y;
        }
    }
    for i in 1..p {
        xtwx[[i, i]] += ridge;
    }
    let beta = solve_linear(xtwx, xtwy)?;
    let weights: Vec<f64> = beta.iter().skip(1).copied().collect();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Eval("non-finite surrogate weights".into()));
    }

    Ok(Explanation {
        target,
        tokens,
        weights,
        confidence,
        n_samples: n,
        dropped,
        seed,
    })
}
