//! The two-layer transformer encoder, its embedding table, and the two task
//! heads (masked-token prediction and emotion classification).

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, MultiHeadAttention};
use super::layers::{dropout, gelu, gelu_backward, LayerNorm, LayerNormCache, Linear};
use super::{Param, ParamSet};

/// Architecture hyperparameters. Fields omitted during deserialization
/// (e.g. in a partial config table) take the documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub feed_forward: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub embed_dropout: f32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            hidden: 128,
            heads: 4,
            feed_forward: 256,
            vocab_size: 8000,
            max_len: 128,
            embed_dropout: 0.1,
        }
    }
}

/// One pre-normalization transformer block:
/// x + attn(ln1(x)), then + ff(ln2(.)).
#[derive(Debug, Clone)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    ln1_out: Array2<f32>,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ln2_out: Array2<f32>,
    ff_pre: Array2<f32>,
    ff_act: Array2<f32>,
}

impl Block {
    fn new(name: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        Block {
            ln1: LayerNorm::new(&format!("{name}.ln1"), cfg.hidden),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), cfg.hidden, cfg.heads, rng),
            ln2: LayerNorm::new(&format!("{name}.ln2"), cfg.hidden),
            ff1: Linear::new(&format!("{name}.ff1"), cfg.hidden, cfg.feed_forward, rng),
            ff2: Linear::new(&format!("{name}.ff2"), cfg.feed_forward, cfg.hidden, rng),
        }
    }

    fn forward(
        &self,
        x: Array2<f32>,
        mask: &Array2<f32>,
        batch: usize,
        seq: usize,
    ) -> (Array2<f32>, BlockCache) {
        let (ln1_out, ln1) = self.ln1.forward(x.view());
        let (attn_out, attn) = self.attn.forward(ln1_out.view(), mask, batch, seq);
        let x_mid = &x + &attn_out;
        let (ln2_out, ln2) = self.ln2.forward(x_mid.view());
        let ff_pre = self.ff1.forward(ln2_out.view());
        let ff_act = gelu(&ff_pre);
        let ff_out = self.ff2.forward(ff_act.view());
        let y = &x_mid + &ff_out;
        (y, BlockCache {
            ln1,
            ln1_out,
            attn,
            ln2,
            ln2_out,
            ff_pre,
            ff_act,
        })
    }

    fn backward(&mut self, cache: &BlockCache, dy: ArrayView2<f32>) -> Array2<f32> {
        // Feed-forward branch.
        let dff_act = self.ff2.backward(cache.ff_act.view(), dy);
        let dff_pre = gelu_backward(&cache.ff_pre, &dff_act);
        let dln2_out = self.ff1.backward(cache.ln2_out.view(), dff_pre.view());
        let mut dx_mid = self.ln2.backward(&cache.ln2, dln2_out.view());
        dx_mid += &dy;
        // Attention branch.
        let dln1_out = self
            .attn
            .backward(cache.ln1_out.view(), &cache.attn, dx_mid.view());
        let mut dx = self.ln1.backward(&cache.ln1, dln1_out.view());
        dx += &dx_mid;
        dx
    }
}

impl ParamSet for Block {
    fn params(&self) -> Vec<&Param> {
        let mut out = self.ln1.params();
        out.extend(self.attn.params());
        out.extend(self.ln2.params());
        out.extend(self.ff1.params());
        out.extend(self.ff2.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.ln1.params_mut();
        out.extend(self.attn.params_mut());
        out.extend(self.ln2.params_mut());
        out.extend(self.ff1.params_mut());
        out.extend(self.ff2.params_mut());
        out
    }
}

/// Token + learned positional embeddings, transformer blocks, final norm.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub tok_emb: Param,
    pub pos_emb: Param,
    pub blocks: Vec<Block>,
    pub final_ln: LayerNorm,
}

pub struct EncoderCache {
    ids: Array2<usize>,
    /// Scaled dropout keep-mask from the embedding layer (eval mode: ones).
    drop_mask: Option<Array2<f32>>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
    batch: usize,
    seq: usize,
}

impl Encoder {
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Self {
        let tok_emb = Param::normal("encoder.tok_emb", &[config.vocab_size, config.hidden], rng);
        let pos_emb = Param::normal("encoder.pos_emb", &[config.max_len, config.hidden], rng);
        let blocks = (0..config.layers)
            .map(|i| Block::new(&format!("encoder.block{i}"), &config, rng))
            .collect();
        let final_ln = LayerNorm::new("encoder.final_ln", config.hidden);
        Encoder {
            config,
            tok_emb,
            pos_emb,
            blocks,
            final_ln,
        }
    }

    /// Encode a padded batch. `ids` is (batch, seq) of vocabulary ids; `mask`
    /// marks real tokens with 1.0. Training mode applies embedding dropout
    /// driven by `rng` and records the mask for the backward pass. Returns
    /// hidden states in the flattened (batch * seq, hidden) layout.
    pub fn forward(
        &self,
        ids: &Array2<usize>,
        mask: &Array2<f32>,
        train: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f32>, EncoderCache) {
        let (batch, seq) = ids.dim();
        assert!(
            seq <= self.config.max_len,
            "sequence length {seq} exceeds maximum {}",
            self.config.max_len
        );
        let hidden = self.config.hidden;
        let tok = self
            .tok_emb
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("tok_emb is 2-d");
        let pos = self
            .pos_emb
            .value
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("pos_emb is 2-d");
        let mut x = Array2::zeros((batch * seq, hidden));
        for b in 0..batch {
            for t in 0..seq {
                let mut row = x.row_mut(b * seq + t);
                row.assign(&tok.row(ids[(b, t)]));
                row += &pos.row(t);
            }
        }
        let drop_mask = if train && self.config.embed_dropout > 0.0 {
            let rng = rng.expect("training forward requires an rng for dropout");
            let (dropped, keep) = dropout(&x, self.config.embed_dropout, rng);
            x = dropped;
            Some(keep)
        } else {
            None
        };
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, cache) = block.forward(x, mask, batch, seq);
            x = next;
            caches.push(cache);
        }
        let (hidden_states, final_ln) = self.final_ln.forward(x.view());
        (hidden_states, EncoderCache {
            ids: ids.clone(),
            drop_mask,
            blocks: caches,
            final_ln,
            batch,
            seq,
        })
    }

    /// Backpropagate `dhidden` (gradient of the final hidden states) into
    /// all encoder parameters.
    pub fn backward(&mut self, cache: &EncoderCache, dhidden: ArrayView2<f32>) {
        let mut dx = self.final_ln.backward(&cache.final_ln, dhidden);
        for (block, bcache) in self.blocks.iter_mut().zip(cache.blocks.iter()).rev() {
            dx = block.backward(bcache, dx.view());
        }
        if let Some(keep) = &cache.drop_mask {
            dx *= keep;
        }
        let mut tok_grad = self
            .tok_emb
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("tok_emb grad is 2-d");
        let mut pos_grad = self
            .pos_emb
            .grad
            .view_mut()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("pos_emb grad is 2-d");
        for b in 0..cache.batch {
            for t in 0..cache.seq {
                let g = dx.row(b * cache.seq + t);
                let mut trow = tok_grad.row_mut(cache.ids[(b, t)]);
                trow += &g;
                let mut prow = pos_grad.row_mut(t);
                prow += &g;
            }
        }
    }

    /// Rows of the flattened hidden states holding each sequence's first
    /// (`<s>`) position.
    pub fn pooled_rows(batch: usize, seq: usize) -> Vec<usize> {
        (0..batch).map(|b| b * seq).collect()
    }
}

impl ParamSet for Encoder {
    fn params(&self) -> Vec<&Param> {
        let mut out = vec![&self.tok_emb, &self.pos_emb];
        for b in &self.blocks {
            out.extend(b.params());
        }
        out.extend(self.final_ln.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend(b.params_mut());
        }
        out.extend(self.final_ln.params_mut());
        out
    }
}

/// Masked-token prediction head: hidden -> vocabulary logits, evaluated only
/// at the positions that were masked.
#[derive(Debug, Clone)]
pub struct MlmHead {
    pub proj: Linear,
}

impl MlmHead {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Self {
        MlmHead {
            proj: Linear::new("mlm_head", cfg.hidden, cfg.vocab_size, rng),
        }
    }

    /// Logits at the given flattened row positions, shape (positions, vocab).
    pub fn forward_at(&self, hidden: ArrayView2<f32>, positions: &[usize]) -> Array2<f32> {
        let gathered = gather_rows(hidden, positions);
        self.proj.forward(gathered.view())
    }

    /// Scatter the positionwise logit gradients back to a gradient over the
    /// full hidden-state array.
    pub fn backward_at(
        &mut self,
        hidden: ArrayView2<f32>,
        positions: &[usize],
        dlogits: ArrayView2<f32>,
    ) -> Array2<f32> {
        let gathered = gather_rows(hidden, positions);
        let dgathered = self.proj.backward(gathered.view(), dlogits);
        let mut dhidden = Array2::zeros((hidden.nrows(), hidden.ncols()));
        for (i, &p) in positions.iter().enumerate() {
            let mut row = dhidden.row_mut(p);
            row += &dgathered.row(i);
        }
        dhidden
    }
}

impl ParamSet for MlmHead {
    fn params(&self) -> Vec<&Param> {
        self.proj.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.proj.params_mut()
    }
}

/// Classification head over the pooled first-position representation.
#[derive(Debug, Clone)]
pub struct ClsHead {
    pub proj: Linear,
}

impl ClsHead {
    pub fn new(cfg: &EncoderConfig, classes: usize, rng: &mut impl Rng) -> Self {
        ClsHead {
            proj: Linear::new("cls_head", cfg.hidden, classes, rng),
        }
    }

    pub fn forward(&self, pooled: ArrayView2<f32>) -> Array2<f32> {
        self.proj.forward(pooled)
    }

    pub fn backward(&mut self, pooled: ArrayView2<f32>, dlogits: ArrayView2<f32>) -> Array2<f32> {
        self.proj.backward(pooled, dlogits)
    }
}

impl ParamSet for ClsHead {
    fn params(&self) -> Vec<&Param> {
        self.proj.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.proj.params_mut()
    }
}

/// Copy the given rows of `x` into a dense matrix.
pub fn gather_rows(x: ArrayView2<f32>, rows: &[usize]) -> Array2<f32> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&x.row(r));
    }
    out
}

/// Pad variable-length id sequences to a shared length with `pad_id`,
/// returning the id matrix and the 1/0 validity mask.
pub fn pad_batch(seqs: &[Vec<u32>], pad_id: u32) -> (Array2<usize>, Array2<f32>) {
    let batch = seqs.len();
    let seq = seqs.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
    let mut ids = Array2::from_elem((batch, seq), pad_id as usize);
    let mut mask = Array2::zeros((batch, seq));
    for (b, s) in seqs.iter().enumerate() {
        for (t, &id) in s.iter().enumerate() {
            ids[(b, t)] = id as usize;
            mask[(b, t)] = 1.0;
        }
    }
    (ids, mask)
}

/// Mean of per-position L2 gradient norms, used by divergence checks.
pub fn any_non_finite(x: &Array2<f32>) -> bool {
    x.iter().any(|v| !v.is_finite())
}
