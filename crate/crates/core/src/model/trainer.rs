//! The three-stage training recipe: masked-language pre-training, linear
//! probing of a classifier head over the frozen encoder, and full fine-tuning
//! with the joint contrastive objective. Also the inference wrapper.
//!
//! Determinism: every random choice draws from a named stream derived from
//! the configured seed. Parameter initialization uses the stream `init`, so
//! two pre-training branches with the same seed start from identical weights
//! and consume identical data order; they differ only through the emotion
//! word set handed to the masker.

use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::emlm::{make_mlm_example, mark_emotion_tokens, MaskingConfig};
use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::model::checkpoint::Checkpoint;
use crate::model::losses::{
    joint_loss, l2_normalize_backward, l2_normalize_rows, smoothed_cross_entropy,
};
use crate::model::optim::{AdamW, AdamWConfig};
use crate::nn::encoder::gather_rows;
use crate::nn::{pad_batch, ClsHead, Encoder, EncoderConfig, MlmHead, ParamSet};
use crate::seeding::stream_rng;
use crate::tokenizer::Vocab;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PretrainConfig {
    pub lr: f32,
    pub batch: usize,
    pub steps: usize,
    pub log_every: usize,
    /// Steps for the emotion-masked continuation branch; `None` reuses
    /// `steps`. The continuation should stay short relative to the base
    /// pre-training so the two branches remain weight-compatible for
    /// averaging.
    pub emlm_steps: Option<usize>,
    /// Learning rate for the continuation branch; `None` reuses `lr`.
    pub emlm_lr: Option<f32>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 5e-5,
            batch: 128,
            steps: 5000,
            log_every: 50,
            emlm_steps: None,
            emlm_lr: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ProbeConfig {
    pub lr: f32,
    pub steps: usize,
    pub batch: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lr: 5e-4,
            steps: 1000,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FinetuneConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub label_smoothing: f64,
    pub epochs: usize,
    /// Batch size over which both losses are computed. Run as one forward
    /// pass at this scale, so the contrastive term sees the whole batch.
    pub effective_batch: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            lr: 1e-5,
            weight_decay: 0.01,
            label_smoothing: 0.1,
            epochs: 5,
            effective_batch: 256,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub lambda: f64,
    pub tau: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            lambda: 0.9,
            tau: 0.3,
        }
    }
}

/// All training hyperparameters for the three stages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(default)]
pub struct TrainConfig {
    pub pretrain: PretrainConfig,
    pub probe: ProbeConfig,
    pub finetune: FinetuneConfig,
    pub contrastive: ContrastiveConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.contrastive.lambda) {
            return Err(Error::Config(format!(
                "contrastive weight must lie in [0, 1], got {}",
                self.contrastive.lambda
            )));
        }
        if self.contrastive.tau <= 0.0 {
            return Err(Error::Config(format!(
                "contrastive temperature must be positive, got {}",
                self.contrastive.tau
            )));
        }
        if !(0.0..1.0).contains(&self.finetune.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.finetune.label_smoothing
            )));
        }
        for (name, v) in [
            ("pretrain batch", self.pretrain.batch),
            ("probe batch", self.probe.batch),
            ("finetune effective batch", self.finetune.effective_batch),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Hash of serialized configuration pieces, recorded in checkpoint
/// provenance.
pub fn config_fingerprint(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn json_of<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config serializes")
}

/// Endless shuffled index stream; reshuffles whenever an epoch is exhausted.
struct IndexStream {
    order: Vec<usize>,
    pos: usize,
}

impl IndexStream {
    fn new(n: usize) -> Self {
        IndexStream {
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos >= self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn to_f64(x: &Array2<f32>) -> Array2<f64> {
    x.mapv(|v| v as f64)
}

fn to_f32(x: &Array2<f64>) -> Array2<f32> {
    x.mapv(|v| v as f32)
}

/// Pre-train the encoder from scratch with masked-token prediction. An empty
/// `emotion_words` set yields the plain uniform-rate branch; a lexicon word
/// set yields the emotion-weighted branch. Returns the checkpoint and the
/// logged (step, loss) history.
pub fn pretrain_mlm(
    texts: &[String],
    vocab: &Vocab,
    emotion_words: &HashSet<String>,
    encoder_cfg: &EncoderConfig,
    cfg: &TrainConfig,
    masking: &MaskingConfig,
    verbose: bool,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    cfg.validate()?;
    masking.validate()?;
    if texts.is_empty() {
        return Err(Error::InvalidInput("no pre-training texts".into()));
    }
    let mut init_rng = stream_rng(cfg.seed, "init");
    let encoder = Encoder::new(encoder_cfg.clone(), &mut init_rng);
    let head = MlmHead::new(encoder_cfg, &mut init_rng);
    mlm_training_loop(encoder, head, vocab, texts, emotion_words, cfg, masking, verbose, vec![])
}

/// Continue masked-token pre-training from an existing pre-training
/// checkpoint, typically under a different masking scheme (plain base, then
/// an emotion-weighted continuation). The base's vocabulary and encoder
/// configuration carry over, so the continued model stays weight-aligned
/// with other models derived from the same base — the property parameter
/// averaging depends on.
pub fn continue_pretrain_mlm(
    base: &Checkpoint,
    texts: &[String],
    emotion_words: &HashSet<String>,
    cfg: &TrainConfig,
    masking: &MaskingConfig,
    verbose: bool,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    cfg.validate()?;
    masking.validate()?;
    if texts.is_empty() {
        return Err(Error::InvalidInput("no pre-training texts".into()));
    }
    if base.manifest.classes.is_some() {
        return Err(Error::InvalidInput(
            "continued pre-training needs a pre-training checkpoint, \
             but this one carries a classifier head"
                .into(),
        ));
    }
    let (encoder, head) = build_mlm(base)?;
    let vocab = base.vocab.clone();
    mlm_training_loop(
        encoder,
        head,
        &vocab,
        texts,
        emotion_words,
        cfg,
        masking,
        verbose,
        vec![base.identity()],
    )
}

#[allow(clippy::too_many_arguments)]
fn mlm_training_loop(
    mut encoder: Encoder,
    mut head: MlmHead,
    vocab: &Vocab,
    texts: &[String],
    emotion_words: &HashSet<String>,
    cfg: &TrainConfig,
    masking: &MaskingConfig,
    verbose: bool,
    parents: Vec<String>,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    let encoder_cfg = encoder.config.clone();

    // Tokenize once; masking re-rolls per step.
    let prepared: Vec<(Vec<u32>, Vec<bool>)> = texts
        .iter()
        .map(|t| {
            let (ids, spans) = vocab.encode_with_spans(t, encoder_cfg.max_len);
            let flags = mark_emotion_tokens(t, &spans, emotion_words);
            (ids, flags)
        })
        .collect();

    let mut order_rng = stream_rng(cfg.seed, "pretrain/order");
    let mut mask_rng = stream_rng(cfg.seed, "pretrain/mask");
    let mut drop_rng = stream_rng(cfg.seed, "pretrain/dropout");
    let mut stream = IndexStream::new(prepared.len());
    let mut opt = AdamW::new(AdamWConfig::new(cfg.pretrain.lr, 0.0));
    let mut history = Vec::new();

    for step in 1..=cfg.pretrain.steps {
        let indices = stream.take(cfg.pretrain.batch, &mut order_rng);
        let mut inputs = Vec::with_capacity(indices.len());
        let mut label_rows = Vec::with_capacity(indices.len());
        for &i in &indices {
            let (ids, flags) = &prepared[i];
            let example = make_mlm_example(ids, flags, vocab, masking, &mut mask_rng);
            inputs.push(example.input_ids);
            label_rows.push(example.labels);
        }
        let (ids, mask) = pad_batch(&inputs, Vocab::PAD_ID);
        let (batch, seq) = ids.dim();
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        for (b, row) in label_rows.iter().enumerate() {
            for (t, &lab) in row.iter().enumerate() {
                if lab != masking.ignore_index {
                    positions.push(b * seq + t);
                    targets.push(lab as usize);
                }
            }
        }
        if positions.is_empty() {
            continue;
        }
        debug_assert_eq!(batch, indices.len());
        let (hidden, cache) = encoder.forward(&ids, &mask, true, Some(&mut drop_rng));
        let logits = head.forward_at(hidden.view(), &positions);
        let (loss, dlogits) = smoothed_cross_entropy(to_f64(&logits).view(), &targets, 0.0)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let dhidden = head.backward_at(hidden.view(), &positions, to_f32(&dlogits).view());
        encoder.backward(&cache, dhidden.view());
        {
            let mut params = encoder.params_mut();
            params.extend(head.params_mut());
            opt.step(&mut params);
        }
        encoder.zero_grads();
        head.zero_grads();
        if step % cfg.pretrain.log_every == 0 || step == cfg.pretrain.steps {
            history.push((step, loss));
            if verbose {
                eprintln!("pretrain step {step}: loss {loss:.4}");
            }
        }
    }

    let fingerprint = config_fingerprint(&[
        &json_of(&encoder_cfg),
        &json_of(cfg),
        &json_of(masking),
        &format!("emotion_words:{}", emotion_words.len()),
    ]);
    let mut params = encoder.params();
    params.extend(head.params());
    let ckpt = Checkpoint::from_params(
        encoder_cfg,
        None,
        vocab.clone(),
        &params,
        "pretrain",
        &fingerprint,
        parents,
    )?;
    Ok((ckpt, history))
}

/// Rebuild an encoder plus masked-token head from a checkpoint.
pub fn build_mlm(ckpt: &Checkpoint) -> Result<(Encoder, MlmHead)> {
    let mut rng = stream_rng(0, "rebuild");
    let mut encoder = Encoder::new(ckpt.manifest.encoder.clone(), &mut rng);
    let mut head = MlmHead::new(&ckpt.manifest.encoder, &mut rng);
    ckpt.load_into(&mut encoder.params_mut())?;
    ckpt.load_into(&mut head.params_mut())?;
    Ok((encoder, head))
}

/// Rebuild an encoder plus classifier head from a probed or fine-tuned
/// checkpoint.
pub fn build_classifier(ckpt: &Checkpoint) -> Result<(Encoder, ClsHead)> {
    let classes = ckpt.manifest.classes.ok_or_else(|| {
        Error::Checkpoint("checkpoint has no classifier head (classes missing)".into())
    })?;
    let mut rng = stream_rng(0, "rebuild");
    let mut encoder = Encoder::new(ckpt.manifest.encoder.clone(), &mut rng);
    let mut head = ClsHead::new(&ckpt.manifest.encoder, classes, &mut rng);
    ckpt.load_into(&mut encoder.params_mut())?;
    ckpt.load_into(&mut head.params_mut())?;
    Ok((encoder, head))
}

/// Fraction of masked positions whose highest-scoring token is the original,
/// on freshly masked copies of `texts` (seeded independently of training).
pub fn masked_token_accuracy(
    ckpt: &Checkpoint,
    texts: &[String],
    emotion_words: &HashSet<String>,
    masking: &MaskingConfig,
    seed: u64,
) -> Result<f64> {
    let (encoder, head) = build_mlm(ckpt)?;
    let vocab = &ckpt.vocab;
    let max_len = ckpt.manifest.encoder.max_len;
    let mut rng = stream_rng(seed, "eval/mask");
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in texts.chunks(64) {
        let mut inputs = Vec::new();
        let mut label_rows = Vec::new();
        for text in chunk {
            let (ids, spans) = vocab.encode_with_spans(text, max_len);
            let flags = mark_emotion_tokens(text, &spans, emotion_words);
            let example = make_mlm_example(&ids, &flags, vocab, masking, &mut rng);
            inputs.push(example.input_ids);
            label_rows.push(example.labels);
        }
        let (ids, mask) = pad_batch(&inputs, Vocab::PAD_ID);
        let seq = ids.ncols();
        let mut positions = Vec::new();
        let mut targets = Vec::new();
        for (b, row) in label_rows.iter().enumerate() {
            for (t, &lab) in row.iter().enumerate() {
                if lab != masking.ignore_index {
                    positions.push(b * seq + t);
                    targets.push(lab as usize);
                }
            }
        }
        if positions.is_empty() {
            continue;
        }
        let (hidden, _) = encoder.forward(&ids, &mask, false, None);
        let logits = head.forward_at(hidden.view(), &positions);
        for (row, &target) in logits.rows().into_iter().zip(targets.iter()) {
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            if best == target {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Eval("no positions were masked".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Compute pooled first-position features for all texts in evaluation mode.
fn pooled_features(encoder: &Encoder, vocab: &Vocab, texts: &[String]) -> Array2<f32> {
    let max_len = encoder.config.max_len;
    let hidden = encoder.config.hidden;
    let mut features = Array2::zeros((texts.len(), hidden));
    let mut row = 0usize;
    for chunk in texts.chunks(256) {
        let encoded: Vec<Vec<u32>> = chunk.iter().map(|t| vocab.encode(t, max_len)).collect();
        let (ids, mask) = pad_batch(&encoded, Vocab::PAD_ID);
        let (batch, seq) = ids.dim();
        let (h, _) = encoder.forward(&ids, &mask, false, None);
        let pooled = gather_rows(h.view(), &Encoder::pooled_rows(batch, seq));
        for b in 0..batch {
            features.row_mut(row).assign(&pooled.row(b));
            row += 1;
        }
    }
    features
}

/// Train a fresh classifier head on the frozen encoder of `base`. The
/// returned checkpoint's encoder tensors are bit-identical to the base; only
/// the head is new.
pub fn linear_probe(
    base: &Checkpoint,
    data: &[(String, EmotionLabel)],
    cfg: &TrainConfig,
    verbose: bool,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("no labeled data for probing".into()));
    }
    let encoder_cfg = base.manifest.encoder.clone();
    let mut rng = stream_rng(0, "rebuild");
    let mut encoder = Encoder::new(encoder_cfg.clone(), &mut rng);
    // Only encoder tensors are read from the base; a pre-training head, when
    // present, is discarded here.
    base.load_into(&mut encoder.params_mut())?;
    let mut head_rng = stream_rng(cfg.seed, "probe/head-init");
    let mut head = ClsHead::new(&encoder_cfg, EmotionLabel::ALL.len(), &mut head_rng);

    let texts: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
    let labels: Vec<usize> = data.iter().map(|(_, l)| l.index()).collect();
    // The encoder is frozen and dropout is off, so features are fixed:
    // compute them once and train the head on cached rows.
    let features = pooled_features(&encoder, &base.vocab, &texts);

    let mut order_rng = stream_rng(cfg.seed, "probe/order");
    let mut stream = IndexStream::new(data.len());
    let mut opt = AdamW::new(AdamWConfig::new(cfg.probe.lr, 0.0));
    for step in 1..=cfg.probe.steps {
        let indices = stream.take(cfg.probe.batch, &mut order_rng);
        let batch = gather_rows(features.view(), &indices);
        let batch_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
        let logits = head.forward(batch.view());
        let (loss, dlogits) = smoothed_cross_entropy(
            to_f64(&logits).view(),
            &batch_labels,
            cfg.finetune.label_smoothing,
        )?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        head.backward(batch.view(), to_f32(&dlogits).view());
        opt.step(&mut head.params_mut());
        head.zero_grads();
        if verbose && step % 100 == 0 {
            eprintln!("probe step {step}: loss {loss:.4}");
        }
    }

    let fingerprint = config_fingerprint(&[&json_of(&encoder_cfg), &json_of(cfg)]);
    let mut params = encoder.params();
    params.extend(head.params());
    Checkpoint::from_params(
        encoder_cfg,
        Some(EmotionLabel::ALL.len()),
        base.vocab.clone(),
        &params,
        "probe",
        &fingerprint,
        vec![base.identity()],
    )
}

/// Training accuracy of a classifier checkpoint on labeled data.
pub fn classifier_accuracy(
    ckpt: &Checkpoint,
    data: &[(String, EmotionLabel)],
) -> Result<f64> {
    let texts: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
    let predictions = predict(ckpt, &texts)?;
    let correct = predictions
        .iter()
        .zip(data.iter())
        .filter(|(p, (_, gold))| p.label == *gold)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

/// Fine-tune every parameter with the joint objective. Returns the final
/// checkpoint and the per-epoch dev macro-F1 history (empty when `dev` is
/// empty).
pub fn fine_tune(
    probed: &Checkpoint,
    train: &[(String, EmotionLabel)],
    dev: &[(String, EmotionLabel)],
    cfg: &TrainConfig,
    verbose: bool,
) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("no labeled data for fine-tuning".into()));
    }
    let (mut encoder, mut head) = build_classifier(probed)?;
    let encoder_cfg = encoder.config.clone();
    let vocab = &probed.vocab;

    let encoded: Vec<Vec<u32>> = train
        .iter()
        .map(|(t, _)| vocab.encode(t, encoder_cfg.max_len))
        .collect();
    let labels: Vec<usize> = train.iter().map(|(_, l)| l.index()).collect();

    let mut order_rng = stream_rng(cfg.seed, "finetune/order");
    let mut drop_rng = stream_rng(cfg.seed, "finetune/dropout");
    let mut opt = AdamW::new(AdamWConfig::new(
        cfg.finetune.lr,
        cfg.finetune.weight_decay,
    ));
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut global_step = 0usize;

    for epoch in 1..=cfg.finetune.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.finetune.effective_batch) {
            // The contrastive term needs at least two examples.
            if chunk.len() < 2 {
                continue;
            }
            global_step += 1;
            let inputs: Vec<Vec<u32>> = chunk.iter().map(|&i| encoded[i].clone()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (ids, mask) = pad_batch(&inputs, Vocab::PAD_ID);
            let (batch, seq) = ids.dim();
            let (hidden, cache) = encoder.forward(&ids, &mask, true, Some(&mut drop_rng));
            let pooled_rows = Encoder::pooled_rows(batch, seq);
            let pooled = gather_rows(hidden.view(), &pooled_rows);
            let logits = head.forward(pooled.view());

            let (z, norms) = l2_normalize_rows(to_f64(&pooled).view());
            let (loss, dlogits, dz) = joint_loss(
                to_f64(&logits).view(),
                z.view(),
                &batch_labels,
                cfg.contrastive.lambda,
                cfg.contrastive.tau,
                cfg.finetune.label_smoothing,
            )?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step: global_step });
            }
            let du = l2_normalize_backward(z.view(), &norms, dz.view());
            let mut dpooled = head.backward(pooled.view(), to_f32(&dlogits).view());
            dpooled += &to_f32(&du);
            let mut dhidden = Array2::zeros((batch * seq, encoder_cfg.hidden));
            for (b, &row) in pooled_rows.iter().enumerate() {
                dhidden.row_mut(row).assign(&dpooled.row(b));
            }
            encoder.backward(&cache, dhidden.view());
            {
                let mut params = encoder.params_mut();
                params.extend(head.params_mut());
                opt.step(&mut params);
            }
            encoder.zero_grads();
            head.zero_grads();
            if verbose {
                eprintln!("finetune epoch {epoch} step {global_step}: loss {loss:.4}");
            }
        }
        if !dev.is_empty() {
            let gold: Vec<EmotionLabel> = dev.iter().map(|(_, l)| *l).collect();
            let texts: Vec<String> = dev.iter().map(|(t, _)| t.clone()).collect();
            let predicted: Vec<EmotionLabel> =
                predict_with(&encoder, &head, vocab, &texts)
                    .into_iter()
                    .map(|p| p.label)
                    .collect();
            let report = crate::eval::macro_f1(&gold, &predicted, &EmotionLabel::ALL)?;
            history.push((epoch, report.macro_f1));
            if verbose {
                eprintln!("finetune epoch {epoch}: dev macro-F1 {:.2}", report.macro_f1);
            }
        }
    }

    let fingerprint = config_fingerprint(&[&json_of(&encoder_cfg), &json_of(cfg)]);
    let mut params = encoder.params();
    params.extend(head.params());
    let ckpt = Checkpoint::from_params(
        encoder_cfg,
        Some(EmotionLabel::ALL.len()),
        probed.vocab.clone(),
        &params,
        "finetune",
        &fingerprint,
        vec![probed.identity()],
    )?;
    Ok((ckpt, history))
}

/// A probability distribution over the five labels plus the argmax label.
/// `degenerate` marks inputs with no content tokens, which receive the
/// uniform distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f32>,
    pub label: EmotionLabel,
    pub degenerate: bool,
}

/// Run an already-built classifier over texts in evaluation mode. Use
/// [`predict`] unless the same model scores many separate calls.
pub fn predict_with(
    encoder: &Encoder,
    head: &ClsHead,
    vocab: &Vocab,
    texts: &[String],
) -> Vec<Prediction> {
    let max_len = encoder.config.max_len;
    let classes = EmotionLabel::ALL.len();
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(128) {
        let encoded: Vec<Vec<u32>> = chunk.iter().map(|t| vocab.encode(t, max_len)).collect();
        let (ids, mask) = pad_batch(&encoded, Vocab::PAD_ID);
        let (batch, seq) = ids.dim();
        let (hidden, _) = encoder.forward(&ids, &mask, false, None);
        let pooled = gather_rows(hidden.view(), &Encoder::pooled_rows(batch, seq));
        let logits = head.forward(pooled.view());
        let probs = crate::nn::layers::softmax_rows(&logits);
        for (b, enc) in encoded.iter().enumerate() {
            // Two tokens means begin + end markers only: no content.
            let degenerate = enc.len() <= 2;
            let row: Vec<f32> = if degenerate {
                vec![1.0 / classes as f32; classes]
            } else {
                probs.row(b).to_vec()
            };
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            out.push(Prediction {
                probs: row,
                label: EmotionLabel::ALL[best],
                degenerate,
            });
        }
    }
    out
}

/// Run a classifier checkpoint over texts in evaluation mode.
pub fn predict(ckpt: &Checkpoint, texts: &[String]) -> Result<Vec<Prediction>> {
    let (encoder, head) = build_classifier(ckpt)?;
    Ok(predict_with(&encoder, &head, &ckpt.vocab, texts))
}

/// Elementwise mean of two checkpoints (see [`Checkpoint::average`]).
pub fn average_weights(a: &Checkpoint, b: &Checkpoint) -> Result<Checkpoint> {
    Checkpoint::average(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn tiny_encoder_cfg() -> EncoderConfig {
        EncoderConfig {
            layers: 2,
            hidden: 16,
            heads: 2,
            feed_forward: 32,
            vocab_size: 200,
            max_len: 24,
            embed_dropout: 0.1,
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            pretrain: PretrainConfig {
                lr: 3e-3,
                batch: 16,
                steps: 120,
                log_every: 10,
            },
            probe: ProbeConfig {
                lr: 0.05,
                steps: 300,
                batch: 32,
            },
            finetune: FinetuneConfig {
                lr: 2e-3,
                weight_decay: 0.01,
                label_smoothing: 0.1,
                epochs: 6,
                effective_batch: 32,
            },
            contrastive: ContrastiveConfig::default(),
            seed: 11,
        }
    }

    fn corpus_and_vocab(n: usize) -> (Vec<(String, EmotionLabel)>, Vocab) {
        let data = synth::generate_labeled(n, 31);
        let texts: Vec<&str> = data.iter().map(|(t, _)| t.as_str()).collect();
        let vocab = Vocab::fit(texts, 200).expect("vocab");
        (data, vocab)
    }

    #[test]
    fn default_train_config_matches_documented_recipe() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.pretrain.lr, 5e-5);
        assert_eq!(cfg.pretrain.batch, 128);
        assert_eq!(cfg.pretrain.steps, 5000);
        assert_eq!(cfg.probe.lr, 5e-4);
        assert_eq!(cfg.probe.steps, 1000);
        assert_eq!(cfg.finetune.lr, 1e-5);
        assert_eq!(cfg.finetune.weight_decay, 0.01);
        assert_eq!(cfg.finetune.label_smoothing, 0.1);
        assert_eq!(cfg.finetune.epochs, 5);
        assert_eq!(cfg.finetune.effective_batch, 256);
        assert_eq!(cfg.contrastive.lambda, 0.9);
        assert_eq!(cfg.contrastive.tau, 0.3);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_validation_rejects_out_of_range_values() {
        let mut cfg = TrainConfig::default();
        cfg.contrastive.lambda = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.contrastive.tau = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.finetune.label_smoothing = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_step_pretraining_returns_the_seeded_initialization() {
        let (data, vocab) = corpus_and_vocab(50);
        let texts: Vec<String> = data.into_iter().map(|(t, _)| t).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 0;
        let encoder_cfg = tiny_encoder_cfg();
        let (ckpt, history) = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &encoder_cfg,
            &cfg,
            &MaskingConfig::plain(),
            false,
        )
        .expect("pretrain");
        assert!(history.is_empty());
        let mut rng = stream_rng(cfg.seed, "init");
        let encoder = Encoder::new(encoder_cfg.clone(), &mut rng);
        let head = MlmHead::new(&encoder_cfg, &mut rng);
        let mut expected = encoder.params();
        expected.extend(head.params());
        for p in expected {
            let tensor = ckpt.get(&p.name).expect("tensor");
            for (a, b) in p.value.iter().zip(tensor.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{} changed", p.name);
            }
        }
    }

    #[test]
    fn both_masking_branches_share_initial_weights() {
        let (data, vocab) = corpus_and_vocab(40);
        let texts: Vec<String> = data.into_iter().map(|(t, _)| t).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 0;
        let encoder_cfg = tiny_encoder_cfg();
        let lexicon = synth::synth_lexicon();
        let (plain, _) = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &encoder_cfg,
            &cfg,
            &MaskingConfig::plain(),
            false,
        )
        .unwrap();
        let (emotion, _) = pretrain_mlm(
            &texts,
            &vocab,
            &lexicon.word_set(None),
            &encoder_cfg,
            &cfg,
            &MaskingConfig::default(),
            false,
        )
        .unwrap();
        assert_eq!(plain.hash(), emotion.hash());
    }

    #[test]
    fn non_finite_weights_report_divergence_with_the_step() {
        let (data, vocab) = corpus_and_vocab(40);
        let texts: Vec<String> = data.into_iter().map(|(t, _)| t).collect();
        let mut cfg = tiny_train_cfg();
        // The pre-normalization architecture absorbs any finite learning
        // rate, so poison the update directly: the first step drives weights
        // to ±inf/NaN and the second step's loss is non-finite.
        cfg.pretrain.lr = f32::INFINITY;
        cfg.pretrain.steps = 30;
        let result = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &tiny_encoder_cfg(),
            &cfg,
            &MaskingConfig::plain(),
            false,
        );
        match result {
            Err(Error::Diverged { step }) => assert!((1..=30).contains(&step)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn probe_with_zero_steps_keeps_the_seeded_head_initialization() {
        let (data, vocab) = corpus_and_vocab(40);
        let texts: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 0;
        cfg.probe.steps = 0;
        let encoder_cfg = tiny_encoder_cfg();
        let (base, _) = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &encoder_cfg,
            &cfg,
            &MaskingConfig::plain(),
            false,
        )
        .unwrap();
        let probed = linear_probe(&base, &data, &cfg, false).expect("probe");
        let mut head_rng = stream_rng(cfg.seed, "probe/head-init");
        let head = ClsHead::new(&encoder_cfg, 5, &mut head_rng);
        for p in head.params() {
            let tensor = probed.get(&p.name).expect("head tensor");
            for (a, b) in p.value.iter().zip(tensor.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    /// One full desk-scale run through all three stages, with the checks the
    /// stages promise: loss decreases, masked accuracy beats chance, probing
    /// freezes the encoder, fine-tuning beats the majority baseline, and
    /// prediction honors its probability contract.
    #[test]
    fn three_stage_smoke_run() {
        let (train, vocab) = corpus_and_vocab(400);
        let dev = synth::generate_labeled(100, 77);
        let texts: Vec<String> = train.iter().map(|(t, _)| t.clone()).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 500;
        let encoder_cfg = tiny_encoder_cfg();
        let lexicon = synth::synth_lexicon();

        // Stage 1: pre-training reduces the masked-token loss.
        let (base, history) = pretrain_mlm(
            &texts,
            &vocab,
            &lexicon.word_set(None),
            &encoder_cfg,
            &cfg,
            &MaskingConfig::default(),
            false,
        )
        .expect("pretrain");
        assert!(history.len() >= 4);
        let first = history[0].1;
        let last = history.last().unwrap().1;
        assert!(
            last < first,
            "MLM loss did not drop: first {first:.4}, last {last:.4}"
        );

        // Masked-token accuracy beats the uniform baseline.
        let held_out: Vec<String> = synth::generate_labeled(100, 99)
            .into_iter()
            .map(|(t, _)| t)
            .collect();
        let acc = masked_token_accuracy(
            &base,
            &held_out,
            &lexicon.word_set(None),
            &MaskingConfig::default(),
            5,
        )
        .expect("accuracy");
        let uniform = 1.0 / vocab.len() as f64;
        assert!(
            acc > uniform,
            "masked accuracy {acc:.4} not above uniform {uniform:.4}"
        );

        // Stage 2: probing trains the head and freezes the encoder.
        let probed = linear_probe(&base, &train, &cfg, false).expect("probe");
        for info in &probed.manifest.tensors {
            if info.name.starts_with("encoder.") {
                let before = base.get(&info.name).expect("base tensor");
                let after = probed.get(&info.name).expect("probed tensor");
                for (a, b) in before.iter().zip(after.iter()) {
                    assert_eq!(a.to_bits(), b.to_bits(), "{} drifted", info.name);
                }
            }
        }

        // On a fixture that is guaranteed linearly separable — at most
        // hidden+1 points in general position — the probe fits perfectly.
        let small: Vec<(String, EmotionLabel)> = {
            let mut per_class: Vec<Vec<(String, EmotionLabel)>> = vec![Vec::new(); 5];
            for (t, l) in &train {
                if per_class[l.index()].len() < 3 {
                    per_class[l.index()].push((t.clone(), *l));
                }
            }
            per_class.into_iter().flatten().collect()
        };
        assert!(small.len() <= encoder_cfg.hidden + 1);
        let mut small_cfg = cfg.clone();
        small_cfg.probe.lr = 0.05;
        small_cfg.probe.steps = 2000;
        small_cfg.probe.batch = small.len();
        let small_probe = linear_probe(&base, &small, &small_cfg, false).expect("probe");
        let small_acc = classifier_accuracy(&small_probe, &small).expect("accuracy");
        assert_eq!(
            small_acc, 1.0,
            "probe under-fits a linearly separable fixture"
        );

        // Stage 3: fine-tuning beats the majority baseline on dev.
        let (tuned, f1_history) = fine_tune(&probed, &train, &dev, &cfg, false).expect("finetune");
        assert_eq!(f1_history.len(), cfg.finetune.epochs);
        let gold: Vec<EmotionLabel> = dev.iter().map(|(_, l)| *l).collect();
        let majority = {
            let mut counts = [0usize; 5];
            for (_, l) in &train {
                counts[l.index()] += 1;
            }
            let best = (0..5).max_by_key(|&i| counts[i]).unwrap();
            let constant: Vec<EmotionLabel> =
                vec![EmotionLabel::ALL[best]; gold.len()];
            crate::eval::macro_f1(&gold, &constant, &EmotionLabel::ALL)
                .unwrap()
                .macro_f1
        };
        let dev_f1 = f1_history.last().unwrap().1;
        assert!(
            dev_f1 > majority,
            "dev macro-F1 {dev_f1:.2} not above majority baseline {majority:.2}"
        );

        // Prediction contract.
        let dev_texts: Vec<String> = dev.iter().map(|(t, _)| t.clone()).collect();
        let preds = predict(&tuned, &dev_texts).expect("predict");
        for p in &preds {
            let sum: f32 = p.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(p.probs.iter().all(|v| *v >= 0.0));
            assert!(!p.degenerate);
        }
        let again = predict(&tuned, &dev_texts).expect("predict");
        for (a, b) in preds.iter().zip(again.iter()) {
            assert_eq!(a.probs, b.probs);
        }

        // A pure marker sentence lands in its own class.
        let marker_text = vec!["feeling gloom and sorrow about work today".to_string()];
        let marker_pred = predict(&tuned, &marker_text).expect("predict");
        assert_eq!(marker_pred[0].label, EmotionLabel::Sadness);

        // Empty text: uniform, degenerate, first label by tie order.
        let empty = predict(&tuned, &["".to_string()]).expect("predict");
        assert!(empty[0].degenerate);
        assert!(empty[0].probs.iter().all(|p| (*p - 0.2).abs() < 1e-6));
        assert_eq!(empty[0].label, EmotionLabel::Sadness);
    }

    #[test]
    fn finetune_with_zero_epochs_is_the_identity() {
        let (data, vocab) = corpus_and_vocab(40);
        let texts: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 0;
        cfg.probe.steps = 10;
        cfg.finetune.epochs = 0;
        let (base, _) = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &tiny_encoder_cfg(),
            &cfg,
            &MaskingConfig::plain(),
            false,
        )
        .unwrap();
        let probed = linear_probe(&base, &data, &cfg, false).unwrap();
        let (tuned, history) = fine_tune(&probed, &data, &[], &cfg, false).unwrap();
        assert!(history.is_empty());
        for (name, tensor) in &probed.tensors {
            let after = tuned.get(name).expect("tensor");
            for (a, b) in tensor.iter().zip(after.iter()) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name} changed");
            }
        }
    }

    #[test]
    fn joint_loss_head_gradients_match_finite_differences() {
        let (data, vocab) = corpus_and_vocab(40);
        let texts: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 0;
        let encoder_cfg = tiny_encoder_cfg();
        let (base, _) = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &encoder_cfg,
            &cfg,
            &MaskingConfig::plain(),
            false,
        )
        .unwrap();
        let (encoder, mut head) = {
            let probed = linear_probe(&base, &data[..20], &cfg, false).unwrap();
            build_classifier(&probed).unwrap()
        };

        // A 4-example batch with two classes.
        let batch: Vec<(String, EmotionLabel)> = vec![
            data[0].clone(),
            data[5].clone(),
            data[1].clone(),
            data[6].clone(),
        ];
        let labels: Vec<usize> = batch.iter().map(|(_, l)| l.index()).collect();
        let encoded: Vec<Vec<u32>> = batch
            .iter()
            .map(|(t, _)| vocab.encode(t, encoder_cfg.max_len))
            .collect();
        let (ids, mask) = pad_batch(&encoded, Vocab::PAD_ID);
        let (b, s) = ids.dim();
        // Evaluation-mode forward keeps the loss a deterministic function of
        // the head weights.
        let loss_of = |head: &ClsHead| -> f64 {
            let (hidden, _) = encoder.forward(&ids, &mask, false, None);
            let pooled = gather_rows(hidden.view(), &Encoder::pooled_rows(b, s));
            let logits = head.forward(pooled.view());
            let (z, _) = l2_normalize_rows(to_f64(&pooled).view());
            let (loss, _, _) = joint_loss(
                to_f64(&logits).view(),
                z.view(),
                &labels,
                cfg.contrastive.lambda,
                cfg.contrastive.tau,
                cfg.finetune.label_smoothing,
            )
            .unwrap();
            loss
        };

        // Analytic head gradient.
        let (hidden, _) = encoder.forward(&ids, &mask, false, None);
        let pooled = gather_rows(hidden.view(), &Encoder::pooled_rows(b, s));
        let logits = head.forward(pooled.view());
        let (z, _) = l2_normalize_rows(to_f64(&pooled).view());
        let (_, dlogits, _) = joint_loss(
            to_f64(&logits).view(),
            z.view(),
            &labels,
            cfg.contrastive.lambda,
            cfg.contrastive.tau,
            cfg.finetune.label_smoothing,
        )
        .unwrap();
        head.zero_grads();
        head.backward(pooled.view(), to_f32(&dlogits).view());

        let h = 1e-2f32;
        for (r, c) in [(0usize, 0usize), (3, 2), (7, 4), (11, 1)] {
            let analytic = head.proj.w.grad[[r, c]] as f64;
            head.proj.w.value[[r, c]] += h;
            let plus = loss_of(&head);
            head.proj.w.value[[r, c]] -= 2.0 * h;
            let minus = loss_of(&head);
            head.proj.w.value[[r, c]] += h;
            let numeric = (plus - minus) / (2.0 * h as f64);
            let tol = 1e-4f64.max(1e-3 * numeric.abs());
            assert!(
                (analytic - numeric).abs() <= tol,
                "head w[{r},{c}]: analytic {analytic:.6} vs numeric {numeric:.6}"
            );
        }
        for c in [0usize, 3] {
            let analytic = head.proj.b.grad[[c]] as f64;
            head.proj.b.value[[c]] += h;
            let plus = loss_of(&head);
            head.proj.b.value[[c]] -= 2.0 * h;
            let minus = loss_of(&head);
            head.proj.b.value[[c]] += h;
            let numeric = (plus - minus) / (2.0 * h as f64);
            let tol = 1e-4f64.max(1e-3 * numeric.abs());
            assert!(
                (analytic - numeric).abs() <= tol,
                "head b[{c}]: analytic {analytic:.6} vs numeric {numeric:.6}"
            );
        }
    }

    #[test]
    fn probe_rejects_empty_data_and_finetune_rejects_empty_train() {
        let (data, vocab) = corpus_and_vocab(20);
        let texts: Vec<String> = data.iter().map(|(t, _)| t.clone()).collect();
        let mut cfg = tiny_train_cfg();
        cfg.pretrain.steps = 0;
        cfg.probe.steps = 5;
        let (base, _) = pretrain_mlm(
            &texts,
            &vocab,
            &HashSet::new(),
            &tiny_encoder_cfg(),
            &cfg,
            &MaskingConfig::plain(),
            false,
        )
        .unwrap();
        assert!(linear_probe(&base, &[], &cfg, false).is_err());
        let probed = linear_probe(&base, &data, &cfg, false).unwrap();
        assert!(fine_tune(&probed, &[], &data, &cfg, false).is_err());
    }
}
