//! Multi-head scaled dot-product self-attention over padded batches.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::layers::{softmax_rows, Linear};
use super::{Param, ParamSet};

/// Self-attention with `heads` parallel heads over a hidden dimension that
/// they divide evenly. Inputs and outputs use the flattened
/// (batch * seq, hidden) layout.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub heads: usize,
}

/// Forward activations needed by the backward pass.
pub struct AttentionCache {
    q: Array2<f32>,
    k: Array2<f32>,
    v: Array2<f32>,
    /// Softmax attention weights, one (seq, seq) matrix per (batch, head).
    probs: Vec<Array2<f32>>,
    /// Concatenated per-head context, input of the output projection.
    context: Array2<f32>,
    batch: usize,
    seq: usize,
}

impl MultiHeadAttention {
    pub fn new(name: &str, hidden: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(hidden % heads == 0, "hidden dim must divide evenly by heads");
        MultiHeadAttention {
            wq: Linear::new(&format!("{name}.wq"), hidden, hidden, rng),
            wk: Linear::new(&format!("{name}.wk"), hidden, hidden, rng),
            wv: Linear::new(&format!("{name}.wv"), hidden, hidden, rng),
            wo: Linear::new(&format!("{name}.wo"), hidden, hidden, rng),
            heads,
        }
    }

    /// `x` is (batch * seq, hidden); `mask` is (batch, seq) with 1 for real
    /// tokens and 0 for padding. Padded positions are excluded as attention
    /// keys; their own outputs are garbage and must be ignored downstream.
    pub fn forward(
        &self,
        x: ArrayView2<f32>,
        mask: &Array2<f32>,
        batch: usize,
        seq: usize,
    ) -> (Array2<f32>, AttentionCache) {
        let hidden = x.ncols();
        let dh = hidden / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let q = self.wq.forward(x);
        let k = self.wk.forward(x);
        let v = self.wv.forward(x);
        let mut context = Array2::zeros((batch * seq, hidden));
        let mut probs = Vec::with_capacity(batch * self.heads);
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let qbh = q.slice(rows).slice_move(cols);
                let kbh = k.slice(rows).slice_move(cols);
                let vbh = v.slice(rows).slice_move(cols);
                let mut scores = qbh.dot(&kbh.t());
                scores.mapv_inplace(|s| s * scale);
                for j in 0..seq {
                    if mask[(b, j)] == 0.0 {
                        scores.column_mut(j).fill(f32::NEG_INFINITY);
                    }
                }
                let attn = softmax_rows(&scores);
                let ctx = attn.dot(&vbh);
                context
                    .slice_mut(rows)
                    .slice_mut(cols)
                    .assign(&ctx);
                probs.push(attn);
            }
        }
        let y = self.wo.forward(context.view());
        (y, AttentionCache {
            q,
            k,
            v,
            probs,
            context,
            batch,
            seq,
        })
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input `x` given upstream gradient `dy`.
    pub fn backward(
        &mut self,
        x: ArrayView2<f32>,
        cache: &AttentionCache,
        dy: ArrayView2<f32>,
    ) -> Array2<f32> {
        let hidden = x.ncols();
        let dh = hidden / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let (batch, seq) = (cache.batch, cache.seq);

        let dcontext = self.wo.backward(cache.context.view(), dy);
        let mut dq = Array2::zeros((batch * seq, hidden));
        let mut dk = Array2::zeros((batch * seq, hidden));
        let mut dv = Array2::zeros((batch * seq, hidden));
        for b in 0..batch {
            let rows = s![b * seq..(b + 1) * seq, ..];
            for h in 0..self.heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let attn = &cache.probs[b * self.heads + h];
                let qbh = cache.q.slice(rows).slice_move(cols);
                let kbh = cache.k.slice(rows).slice_move(cols);
                let vbh = cache.v.slice(rows).slice_move(cols);
                let dctx = dcontext.slice(rows).slice_move(cols);

                let dvbh = attn.t().dot(&dctx);
                let dattn = dctx.dot(&vbh.t());
                // Softmax backward per row: p * (da - sum(da * p)).
                let row_dot = (&dattn * attn).sum_axis(Axis(1));
                let mut dscores = dattn;
                for (i, mut row) in dscores.rows_mut().into_iter().enumerate() {
                    let d = row_dot[i];
                    for (j, val) in row.iter_mut().enumerate() {
                        *val = attn[(i, j)] * (*val - d) * scale;
                    }
                }
                let dqbh = dscores.dot(&kbh);
                let dkbh = dscores.t().dot(&qbh);
                dq.slice_mut(rows).slice_mut(cols).assign(&dqbh);
                dk.slice_mut(rows).slice_mut(cols).assign(&dkbh);
                dv.slice_mut(rows).slice_mut(cols).assign(&dvbh);
            }
        }
        let mut dx = self.wq.backward(x, dq.view());
        dx += &self.wk.backward(x, dk.view());
        dx += &self.wv.backward(x, dv.view());
        dx
    }
}

impl ParamSet for MultiHeadAttention {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.wq.params();
        out.extend(self.wk.params());
        out.extend(self.wv.params());
        out.extend(self.wo.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.wq.params_mut();
        out.extend(self.wk.params_mut());
        out.extend(self.wv.params_mut());
        out.extend(self.wo.params_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use approx::assert_abs_diff_eq;

    fn fixture() -> (MultiHeadAttention, Array2<f32>, Array2<f32>) {
        let mut rng = stream_rng(21, "test/attn");
        let attn = MultiHeadAttention::new("t", 8, 2, &mut rng);
        let x = Array2::from_shape_simple_fn((2 * 3, 8), || rng.gen::<f32>() - 0.5);
        let mask = Array2::from_elem((2, 3), 1.0);
        (attn, x, mask)
    }

    #[test]
    fn attention_rows_mix_only_unmasked_keys() {
        let (attn, x, mut mask) = fixture();
        mask[(0, 2)] = 0.0;
        let (_, cache) = attn.forward(x.view(), &mask, 2, 3);
        // First batch element: no row may attend to masked key 2.
        for h in 0..2 {
            let probs = &cache.probs[h];
            for i in 0..3 {
                assert_eq!(probs[(i, 2)], 0.0);
                assert_abs_diff_eq!(probs.row(i).sum(), 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn padding_does_not_change_real_token_outputs() {
        let (attn, x, mask) = fixture();
        let (y, _) = attn.forward(x.view(), &mask, 2, 3);
        // Re-run with one extra padded position appended per sequence.
        let mut x_pad = Array2::zeros((2 * 4, 8));
        let mut mask_pad = Array2::zeros((2, 4));
        for b in 0..2 {
            for t in 0..3 {
                x_pad.row_mut(b * 4 + t).assign(&x.row(b * 3 + t));
                mask_pad[(b, t)] = 1.0;
            }
        }
        let (y_pad, _) = attn.forward(x_pad.view(), &mask_pad, 2, 4);
        for b in 0..2 {
            for t in 0..3 {
                for c in 0..8 {
                    assert_abs_diff_eq!(
                        y[(b * 3 + t, c)],
                        y_pad[(b * 4 + t, c)],
                        epsilon = 1e-5
                    );
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (mut attn, x, mask) = fixture();
        let (y, cache) = attn.forward(x.view(), &mask, 2, 3);
        let dy = y.mapv(|v| 2.0 * v);
        let dx = attn.backward(x.view(), &cache, dy.view());
        let mut numeric = Array2::zeros(x.raw_dim());
        let h = 1e-2f32;
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut plus = x.clone();
            plus[(r, c)] += h;
            let mut minus = x.clone();
            minus[(r, c)] -= h;
            let (yp, _) = attn.forward(plus.view(), &mask, 2, 3);
            let (ym, _) = attn.forward(minus.view(), &mask, 2, 3);
            numeric[(r, c)] =
                (yp.mapv(|v| v * v).sum() - ym.mapv(|v| v * v).sum()) / (2.0 * h);
        }
        for (a, n) in dx.iter().zip(numeric.iter()) {
            let tol = 2e-3f32.max(2e-2 * n.abs());
            assert!((a - n).abs() <= tol, "analytic {a} vs numeric {n}");
        }
    }

    #[test]
    fn weight_gradients_match_finite_differences() {
        let (mut attn, x, mask) = fixture();
        let (y, cache) = attn.forward(x.view(), &mask, 2, 3);
        let dy = y.mapv(|v| 2.0 * v);
        attn.backward(x.view(), &cache, dy.view());
        // Check a scattering of wq and wo entries numerically.
        let h = 1e-2f32;
        for (r, c) in [(0usize, 0usize), (3, 5), (7, 2)] {
            for which in ["wq", "wo"] {
                let analytic = {
                    let p = if which == "wq" { &attn.wq.w } else { &attn.wo.w };
                    p.grad[[r, c]]
                };
                let mut probe = |delta: f32| {
                    let p = if which == "wq" {
                        &mut attn.wq.w
                    } else {
                        &mut attn.wo.w
                    };
                    p.value[[r, c]] += delta;
                    let (yp, _) = attn.forward(x.view(), &mask, 2, 3);
                    let p = if which == "wq" {
                        &mut attn.wq.w
                    } else {
                        &mut attn.wo.w
                    };
                    p.value[[r, c]] -= delta;
                    yp.mapv(|v| v * v).sum()
                };
                let numeric = (probe(h) - probe(-h)) / (2.0 * h);
                let tol = 2e-3f32.max(2e-2 * numeric.abs());
                assert!(
                    (analytic - numeric).abs() <= tol,
                    "{which}[{r},{c}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }
}
