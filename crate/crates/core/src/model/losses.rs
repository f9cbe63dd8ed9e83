//! Training objectives: label-smoothed cross-entropy, the supervised
//! contrastive loss, and their weighted combination. Losses run in f64 for
//! numerically trustworthy values and gradients; the training loop converts
//! from and to its f32 tensors at the boundary.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Label-smoothed cross-entropy, mean over the batch. The target for each
/// row is (1 - eps) on the gold class plus eps / K spread uniformly.
/// Returns the loss and its gradient with respect to the logits.
pub fn smoothed_cross_entropy(
    logits: ArrayView2<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::InvalidInput(format!(
            "label smoothing must lie in [0, 1), got {eps}"
        )));
    }
    let (n, k) = logits.dim();
    if n == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let uniform = eps / k as f64;
    let mut grad = Array2::zeros((n, k));
    let mut loss = 0.0;
    for (i, row) in logits.rows().into_iter().enumerate() {
        if labels[i] >= k {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {k} classes",
                labels[i]
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (j, &logit) in row.iter().enumerate() {
            let target = uniform + if j == labels[i] { 1.0 - eps } else { 0.0 };
            loss -= target * (logit - lse);
            let softmax = (logit - lse).exp();
            grad[(i, j)] = (softmax - target) / n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}

/// Supervised contrastive loss over L2-normalized embeddings `z` (rows) with
/// integer labels, temperature `tau`. For each anchor i with positive set
/// P(i) = {p != i : label_p = label_i}:
///
///   L_i = -(1/|P(i)|) sum_{p in P(i)} log( exp(z_i.z_p / tau)
///                                         / sum_{k != i} exp(z_i.z_k / tau) )
///
/// The result averages L_i over anchors with at least one positive; anchors
/// without positives contribute nothing. A batch where no anchor has a
/// positive yields loss 0 with zero gradient.
pub fn supcon_loss(
    z: ArrayView2<f64>,
    labels: &[usize],
    tau: f64,
) -> Result<(f64, Array2<f64>)> {
    if tau <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "contrastive temperature must be positive, got {tau}"
        )));
    }
    let n = z.nrows();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "contrastive loss needs a batch of at least 2, got {n}"
        )));
    }
    if labels.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} embeddings for {} labels",
            labels.len()
        )));
    }

    // Similarity matrix s_ik = z_i . z_k / tau.
    let sims = z.dot(&z.t()) / tau;
    let mut anchors = 0usize;
    let mut loss = 0.0;
    // d L_total / d s_ik before the 1/|anchors| factor.
    let mut dsim = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && labels[p] == labels[i])
            .collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let row = sims.row(i);
        let max = (0..n)
            .filter(|&k| k != i)
            .map(|k| row[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n)
            .filter(|&k| k != i)
            .map(|k| (row[k] - max).exp())
            .sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss -= inv_p * (row[p] - lse);
            dsim[(i, p)] -= inv_p;
        }
        for k in 0..n {
            if k != i {
                dsim[(i, k)] += (row[k] - lse).exp();
            }
        }
    }
    if anchors == 0 {
        return Ok((0.0, Array2::zeros((n, z.ncols()))));
    }
    loss /= anchors as f64;
    dsim /= anchors as f64;
    // s = Z Z^T / tau, so dL/dZ = (D + D^T) Z / tau.
    let grad = (dsim.dot(&z) + dsim.t().dot(&z)) / tau;
    Ok((loss, grad))
}

/// Joint objective L = (1 - lambda) * smoothed CE + lambda * SupCon.
/// Returns (loss, dlogits, dz).
pub fn joint_loss(
    logits: ArrayView2<f64>,
    z: ArrayView2<f64>,
    labels: &[usize],
    lambda: f64,
    tau: f64,
    eps: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidInput(format!(
            "loss mixing weight must lie in [0, 1], got {lambda}"
        )));
    }
    let (ce, mut dlogits) = smoothed_cross_entropy(logits, labels, eps)?;
    let (sc, mut dz) = supcon_loss(z, labels, tau)?;
    dlogits *= 1.0 - lambda;
    dz *= lambda;
    Ok(((1.0 - lambda) * ce + lambda * sc, dlogits, dz))
}

/// Normalize each row to unit L2 length. Returns the normalized rows and the
/// original norms (clamped away from zero for all-zero rows).
pub fn l2_normalize_rows(u: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = u.map_axis(Axis(1), |row| {
        row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12)
    });
    let mut z = u.to_owned();
    for (mut row, &nrm) in z.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / nrm);
    }
    (z, norms)
}

/// Backward pass of row normalization: given z = u / |u| and dL/dz, the
/// input gradient is (dz - (z . dz) z) / |u| per row.
pub fn l2_normalize_backward(
    z: ArrayView2<f64>,
    norms: &Array1<f64>,
    dz: ArrayView2<f64>,
) -> Array2<f64> {
    let mut du = dz.to_owned();
    for i in 0..z.nrows() {
        let zi = z.row(i);
        let proj: f64 = zi.iter().zip(dz.row(i).iter()).map(|(a, b)| a * b).sum();
        let mut row = du.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - proj * zi[j]) / norms[i];
        }
    }
    du
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    const LN_5: f64 = 1.6094379124341003;
    /// Direct summation of the contrastive formula on four unit vectors at
    /// angles {0, 10, 90, 100} degrees with labels {a, a, b, b} and tau 0.3,
    /// evaluated before this module was written.
    const SUPCON_FOUR_POINT: f64 = 0.07814050056582642;

    fn angle_embeddings() -> Array2<f64> {
        let angles = [0.0f64, 10.0, 90.0, 100.0];
        let mut z = Array2::zeros((4, 2));
        for (i, a) in angles.iter().enumerate() {
            let r = a.to_radians();
            z[(i, 0)] = r.cos();
            z[(i, 1)] = r.sin();
        }
        z
    }

    #[test]
    fn uniform_logits_cost_log_of_class_count() {
        let logits = Array2::zeros((3, 5));
        for eps in [0.0, 0.1, 0.5] {
            let (loss, _) = smoothed_cross_entropy(logits.view(), &[0, 2, 4], eps).unwrap();
            assert_abs_diff_eq!(loss, LN_5, epsilon = 1e-12);
        }
    }

    #[test]
    fn confident_correct_logits_cost_nearly_nothing_without_smoothing() {
        let mut logits = Array2::zeros((1, 5));
        logits[(0, 3)] = 50.0;
        let (loss, _) = smoothed_cross_entropy(logits.view(), &[3], 0.0).unwrap();
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn cross_entropy_matches_direct_formula_on_random_logits() {
        let mut rng = crate::seeding::stream_rng(17, "test/ce-oracle");
        let logits = Array2::from_shape_simple_fn((6, 5), || rng.gen::<f64>() * 4.0 - 2.0);
        let labels = [0usize, 1, 2, 3, 4, 2];
        let eps = 0.1;
        let (loss, _) = smoothed_cross_entropy(logits.view(), &labels, eps).unwrap();
        // Independent evaluation: explicit softmax probabilities per row.
        let mut expected = 0.0;
        for (i, row) in logits.rows().into_iter().enumerate() {
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for (j, v) in row.iter().enumerate() {
                let t = eps / 5.0 + if j == labels[i] { 1.0 - eps } else { 0.0 };
                expected -= t * (v.exp() / denom).ln();
            }
        }
        expected /= 6.0;
        assert_abs_diff_eq!(loss, expected, epsilon = 1e-6);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = crate::seeding::stream_rng(18, "test/ce-fd");
        let logits = Array2::from_shape_simple_fn((4, 5), || rng.gen::<f64>() * 2.0 - 1.0);
        let labels = [1usize, 0, 4, 3];
        let (_, grad) = smoothed_cross_entropy(logits.view(), &labels, 0.1).unwrap();
        let h = 1e-6;
        for idx in [(0, 1), (1, 3), (2, 0), (3, 4)] {
            let mut plus = logits.clone();
            plus[idx] += h;
            let mut minus = logits.clone();
            minus[idx] -= h;
            let (lp, _) = smoothed_cross_entropy(plus.view(), &labels, 0.1).unwrap();
            let (lm, _) = smoothed_cross_entropy(minus.view(), &labels, 0.1).unwrap();
            let numeric = (lp - lm) / (2.0 * h);
            assert_abs_diff_eq!(grad[idx], numeric, epsilon = 1e-6);
        }
    }

    #[test]
    fn rejects_invalid_smoothing_and_labels() {
        let logits = Array2::zeros((1, 5));
        assert!(smoothed_cross_entropy(logits.view(), &[0], 1.0).is_err());
        assert!(smoothed_cross_entropy(logits.view(), &[5], 0.1).is_err());
        assert!(smoothed_cross_entropy(logits.view(), &[0, 1], 0.1).is_err());
    }

    #[test]
    fn two_identical_label_embeddings_cost_nothing() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, grad) = supcon_loss(z.view(), &[0, 0], 0.3).unwrap();
        assert_abs_diff_eq!(loss, 0.0, epsilon = 1e-12);
        // Single positive equals the full denominator: gradient vanishes too.
        assert!(grad.iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn batch_without_positives_costs_nothing() {
        let z = array![[1.0, 0.0], [0.0, 1.0]];
        let (loss, grad) = supcon_loss(z.view(), &[0, 1], 0.3).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn four_point_fixture_matches_precomputed_value() {
        let z = angle_embeddings();
        let (loss, _) = supcon_loss(z.view(), &[0, 0, 1, 1], 0.3).unwrap();
        assert_abs_diff_eq!(loss, SUPCON_FOUR_POINT, epsilon = 1e-12);
    }

    #[test]
    fn supcon_is_rotation_invariant() {
        let z = angle_embeddings();
        let theta = 0.7f64;
        let rot = array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]];
        let zr = z.dot(&rot);
        let (a, _) = supcon_loss(z.view(), &[0, 0, 1, 1], 0.3).unwrap();
        let (b, _) = supcon_loss(zr.view(), &[0, 0, 1, 1], 0.3).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn supcon_gradient_matches_finite_differences() {
        let z = angle_embeddings();
        let labels = [0usize, 0, 1, 1];
        let (_, grad) = supcon_loss(z.view(), &labels, 0.3).unwrap();
        let h = 1e-6;
        for r in 0..4 {
            for c in 0..2 {
                let mut plus = z.clone();
                plus[(r, c)] += h;
                let mut minus = z.clone();
                minus[(r, c)] -= h;
                let (lp, _) = supcon_loss(plus.view(), &labels, 0.3).unwrap();
                let (lm, _) = supcon_loss(minus.view(), &labels, 0.3).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                assert_abs_diff_eq!(grad[(r, c)], numeric, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn supcon_rejects_bad_temperature_and_tiny_batches() {
        let z = angle_embeddings();
        assert!(supcon_loss(z.view(), &[0, 0, 1, 1], 0.0).is_err());
        assert!(supcon_loss(z.view(), &[0, 0, 1, 1], -1.0).is_err());
        let single = array![[1.0, 0.0]];
        assert!(supcon_loss(single.view(), &[0], 0.3).is_err());
    }

    #[test]
    fn joint_loss_endpoints_recover_each_term() {
        let z = angle_embeddings();
        let labels = [0usize, 0, 1, 1];
        let mut rng = crate::seeding::stream_rng(19, "test/joint");
        let logits = Array2::from_shape_simple_fn((4, 5), || rng.gen::<f64>() - 0.5);
        let lab5: Vec<usize> = labels.iter().map(|&l| l % 5).collect();
        let (ce, _) = smoothed_cross_entropy(logits.view(), &lab5, 0.1).unwrap();
        let (sc, _) = supcon_loss(z.view(), &labels, 0.3).unwrap();
        let (l0, _, dz0) = joint_loss(logits.view(), z.view(), &lab5, 0.0, 0.3, 0.1).unwrap();
        assert_abs_diff_eq!(l0, ce, epsilon = 1e-12);
        assert!(dz0.iter().all(|g| *g == 0.0));
        let (l1, dlogits1, _) =
            joint_loss(logits.view(), z.view(), &lab5, 1.0, 0.3, 0.1).unwrap();
        assert_abs_diff_eq!(l1, sc, epsilon = 1e-12);
        assert!(dlogits1.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_class_batch_reduces_to_scaled_cross_entropy() {
        let (z, _) = l2_normalize_rows(array![[1.0, 0.2], [0.8, 0.1], [0.9, 0.3]].view());
        let labels = [2usize, 2, 2];
        let logits =
            Array2::from_shape_fn((3, 5), |(_, j)| [0.3, -0.1, 0.5, 0.0, 0.2][j]);
        let (ce, _) = smoothed_cross_entropy(logits.view(), &labels, 0.1).unwrap();
        let (sc, _) = supcon_loss(z.view(), &labels, 0.3).unwrap();
        let (joint, _, _) = joint_loss(logits.view(), z.view(), &labels, 0.9, 0.3, 0.1).unwrap();
        assert_abs_diff_eq!(joint, 0.1 * ce + 0.9 * sc, epsilon = 1e-12);
    }

    #[test]
    fn normalization_produces_unit_rows_and_exact_backward() {
        let u = array![[3.0, 4.0], [0.5, -0.5], [10.0, 0.0]];
        let (z, norms) = l2_normalize_rows(u.view());
        for row in z.rows() {
            let len: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(len, 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(norms[0], 5.0, epsilon = 1e-12);

        // Finite-difference check through normalize + supcon.
        let labels = [0usize, 0, 1];
        let (_, dz) = supcon_loss(z.view(), &labels, 0.5).unwrap();
        let du = l2_normalize_backward(z.view(), &norms, dz.view());
        let h = 1e-6;
        for r in 0..3 {
            for c in 0..2 {
                let mut plus = u.clone();
                plus[(r, c)] += h;
                let mut minus = u.clone();
                minus[(r, c)] -= h;
                let (zp, _) = l2_normalize_rows(plus.view());
                let (zm, _) = l2_normalize_rows(minus.view());
                let (lp, _) = supcon_loss(zp.view(), &labels, 0.5).unwrap();
                let (lm, _) = supcon_loss(zm.view(), &labels, 0.5).unwrap();
                let numeric = (lp - lm) / (2.0 * h);
                assert_abs_diff_eq!(du[(r, c)], numeric, epsilon = 1e-6);
            }
        }
    }
}
