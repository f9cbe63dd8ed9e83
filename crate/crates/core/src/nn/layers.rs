//! Dense layers and activations with explicit backward passes. All
//! activations operate on two-dimensional arrays whose rows are independent
//! (a flattened batch-by-position layout).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::{Param, ParamSet};

/// Fully connected layer: y = x W + b with W of shape (in, out).
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(name: &str, dim_in: usize, dim_out: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: Param::normal(format!("{name}.w"), &[dim_in, dim_out], rng),
            b: Param::zeros(format!("{name}.b"), &[dim_out]),
        }
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> Array2<f32> {
        let w = self
            .w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("w is 2-d");
        let b = self
            .b
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("b is 1-d");
        x.dot(&w) + &b
    }

    /// Accumulates dW and db from the layer input `x` and upstream gradient
    /// `dy`; returns the gradient with respect to `x`.
    pub fn backward(&mut self, x: ArrayView2<f32>, dy: ArrayView2<f32>) -> Array2<f32> {
        let w = self
            .w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("w is 2-d");
        let dw = x.t().dot(&dy);
        self.w.grad += &dw;
        let db = dy.sum_axis(Axis(0));
        self.b.grad += &db;
        dy.dot(&w.t())
    }
}

impl ParamSet for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
    pub eps: f32,
}

/// Activations saved by the normalization forward pass for its backward.
pub struct LayerNormCache {
    /// Normalized input before gain and bias, shape (rows, dim).
    normalized: Array2<f32>,
    /// Reciprocal standard deviation per row.
    inv_std: Array1<f32>,
}

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: Param::ones(format!("{name}.g"), &[dim]),
            bias: Param::zeros(format!("{name}.b"), &[dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: ArrayView2<f32>) -> (Array2<f32>, LayerNormCache) {
        let dim = x.ncols() as f32;
        let mean = x.mean_axis(Axis(1)).expect("nonempty rows");
        let mut centered = x.to_owned();
        for (mut row, m) in centered.rows_mut().into_iter().zip(mean.iter()) {
            row.mapv_inplace(|v| v - m);
        }
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / dim;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut normalized = centered;
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter()) {
            row.mapv_inplace(|v| v * s);
        }
        let gain = self
            .gain
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("gain is 1-d");
        let bias = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias is 1-d");
        let y = &normalized * &gain + &bias;
        (y, LayerNormCache {
            normalized,
            inv_std,
        })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: ArrayView2<f32>) -> Array2<f32> {
        let dim = dy.ncols() as f32;
        let gain = self
            .gain
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("gain is 1-d");
        self.gain.grad += &(&cache.normalized * &dy).sum_axis(Axis(0));
        self.bias.grad += &dy.sum_axis(Axis(0));

        // dx = inv_std * (dn - mean(dn) - normalized * mean(dn * normalized))
        // where dn = dy * gain, means taken per row.
        let dn = &dy * &gain;
        let mean_dn = dn.mean_axis(Axis(1)).expect("nonempty rows");
        let mean_dn_norm = (&dn * &cache.normalized).sum_axis(Axis(1)) / dim;
        let mut dx = dn;
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let a = mean_dn[i];
            let b = mean_dn_norm[i];
            let s = cache.inv_std[i];
            let norm_row = cache.normalized.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = s * (*v - a - norm_row[j] * b);
            }
        }
        dx
    }
}

impl ParamSet for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gain, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gain, &mut self.bias]
    }
}

const GELU_C: f32 = 0.7978845608028654; // sqrt(2 / pi)
const GELU_A: f32 = 0.044715;

/// Gaussian error linear unit, tanh approximation.
pub fn gelu(x: &Array2<f32>) -> Array2<f32> {
    x.mapv(|v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
}

/// Gradient of `gelu` with respect to its input, given the pre-activation.
pub fn gelu_backward(x: &Array2<f32>, dy: &Array2<f32>) -> Array2<f32> {
    let mut dx = x.clone();
    ndarray::Zip::from(&mut dx).and(dy).for_each(|v, &g| {
        let u = GELU_C * (*v + GELU_A * *v * *v * *v);
        let t = u.tanh();
        let du = GELU_C * (1.0 + 3.0 * GELU_A * *v * *v);
        *v = g * (0.5 * (1.0 + t) + 0.5 * *v * (1.0 - t * t) * du);
    });
    dx
}

/// Inverted dropout: zero each element with probability `p` and scale the
/// rest by 1/(1-p). Returns the output and the scaled keep mask (which is
/// also the local gradient).
pub fn dropout(x: &Array2<f32>, p: f32, rng: &mut impl Rng) -> (Array2<f32>, Array2<f32>) {
    assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
    let scale = 1.0 / (1.0 - p);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
        if rng.gen::<f32>() < p {
            0.0
        } else {
            scale
        }
    });
    (x * &mask, mask)
}

/// Numerically stable softmax over each row.
pub fn softmax_rows(x: &Array2<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f32 = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    /// Central-difference gradient of `f` with respect to `x`.
    fn finite_diff(
        x: &Array2<f32>,
        mut f: impl FnMut(&Array2<f32>) -> f32,
        h: f32,
    ) -> Array2<f32> {
        let mut grad = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = x.clone();
            plus[(r, c)] += h;
            let mut minus = x.clone();
            minus[(r, c)] -= h;
            grad[(r, c)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        grad
    }

    fn assert_close(analytic: &Array2<f32>, numeric: &Array2<f32>, rel: f32, floor: f32) {
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let tol = floor.max(rel * n.abs());
            assert!(
                (a - n).abs() <= tol,
                "analytic {a} vs numeric {n} beyond tolerance {tol}"
            );
        }
    }

    #[test]
    fn linear_forward_matches_manual_product() {
        let mut rng = stream_rng(7, "test/linear");
        let mut layer = Linear::new("t", 2, 2, &mut rng);
        layer.w.value = array![[1.0f32, 2.0], [3.0, 4.0]].into_dyn();
        layer.b.value = array![0.5f32, -0.5].into_dyn();
        let x = array![[1.0f32, 1.0]];
        let y = layer.forward(x.view());
        assert_abs_diff_eq!(y[(0, 0)], 4.5, epsilon = 1e-6);
        assert_abs_diff_eq!(y[(0, 1)], 5.5, epsilon = 1e-6);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = stream_rng(7, "test/linear-bwd");
        let mut layer = Linear::new("t", 3, 2, &mut rng);
        let x = Array2::from_shape_simple_fn((4, 3), || rng.gen::<f32>() - 0.5);
        // Scalar objective: sum of squared outputs.
        let dy = layer.forward(x.view()).mapv(|v| 2.0 * v);
        let dx = layer.backward(x.view(), dy.view());
        let numeric = finite_diff(
            &x,
            |xp| layer.forward(xp.view()).mapv(|v| v * v).sum(),
            1e-2,
        );
        assert_close(&dx, &numeric, 1e-2, 1e-3);
    }

    #[test]
    fn layernorm_rows_have_zero_mean_unit_variance() {
        let ln = LayerNorm::new("t", 8);
        let mut rng = stream_rng(3, "test/ln");
        let x = Array2::from_shape_simple_fn((5, 8), || rng.gen::<f32>() * 4.0 - 2.0);
        let (y, _) = ln.forward(x.view());
        for row in y.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-5);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn layernorm_backward_matches_finite_differences() {
        let mut ln = LayerNorm::new("t", 6);
        let mut rng = stream_rng(11, "test/ln-bwd");
        // Non-trivial gain so the gradient path through it is exercised.
        ln.gain.value.mapv_inplace(|_| rng.gen::<f32>() + 0.5);
        let x = Array2::from_shape_simple_fn((3, 6), || rng.gen::<f32>() * 2.0 - 1.0);
        let (y, cache) = ln.forward(x.view());
        let dy = y.mapv(|v| 2.0 * v);
        let dx = ln.backward(&cache, dy.view());
        let numeric = finite_diff(
            &x,
            |xp| {
                let (yp, _) = ln.forward(xp.view());
                yp.mapv(|v| v * v).sum()
            },
            1e-2,
        );
        assert_close(&dx, &numeric, 2e-2, 2e-3);
    }

    #[test]
    fn gelu_matches_reference_points() {
        // Reference values computed from the tanh approximation directly.
        let x = array![[0.0f32, 1.0, -1.0, 2.0]];
        let y = gelu(&x);
        assert_abs_diff_eq!(y[(0, 0)], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(y[(0, 1)], 0.841192, epsilon = 1e-5);
        assert_abs_diff_eq!(y[(0, 2)], -0.158808, epsilon = 1e-5);
        assert_abs_diff_eq!(y[(0, 3)], 1.954598, epsilon = 1e-5);
    }

    #[test]
    fn gelu_backward_matches_finite_differences() {
        let mut rng = stream_rng(5, "test/gelu");
        let x = Array2::from_shape_simple_fn((4, 5), || rng.gen::<f32>() * 4.0 - 2.0);
        let ones = Array2::ones(x.raw_dim());
        let dx = gelu_backward(&x, &ones);
        let numeric = finite_diff(&x, |xp| gelu(xp).sum(), 1e-2);
        assert_close(&dx, &numeric, 1e-2, 1e-3);
    }

    #[test]
    fn dropout_scales_survivors_and_reports_mask() {
        let mut rng = stream_rng(9, "test/dropout");
        let x = Array2::from_elem((50, 40), 1.0f32);
        let (y, mask) = dropout(&x, 0.25, &mut rng);
        let kept = y.iter().filter(|v| **v > 0.0).count();
        let frac = kept as f64 / y.len() as f64;
        assert!((frac - 0.75).abs() < 0.05, "kept fraction {frac}");
        for (v, m) in y.iter().zip(mask.iter()) {
            assert!(*v == 0.0 && *m == 0.0 || (*v - 1.0 / 0.75).abs() < 1e-6 && *m == *v);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0f32, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax_rows(&x);
        for row in p.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-6);
        }
        assert!(p[(1, 2)] > 0.99);
    }
}
