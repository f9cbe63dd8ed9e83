//! `emoclass`: emotion classification for short social-media text.
//!
//! Subcommands cover every pipeline step individually (preprocess, split,
//! pretrain, probe, finetune, soup, predict, baselines, evaluate, rank,
//! sample-errors, explain) plus `run`, which executes the whole experiment
//! from a TOML config file, and `synth`, which generates a self-contained
//! synthetic corpus to try everything on.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use emoclass::attribution::{self, MIN_RIDGE};
use emoclass::baselines::{CategoryMap, DictionaryModel, NbsvmConfig, NbsvmModel};
use emoclass::config::ExperimentConfig;
use emoclass::corpus::{run_pipeline, PipelineConfig, RawPost, TagMap};
use emoclass::eval::ood::{map_ood_label, prepare_enisear};
use emoclass::eval::report::{CellScore, EvalGrid};
use emoclass::eval::{average_rank, bootstrap_ci, macro_f1, sample_errors, PredictionRecord, ScoreMatrix};
use emoclass::experiment::{run_experiment, RunOptions};
use emoclass::jsonl::{read_jsonl, read_jsonl_lenient, write_jsonl};
use emoclass::lexicon::{load_lexicon, save_lexicon};
use emoclass::model::{
    average_weights, build_classifier, fine_tune, linear_probe, predict, predict_with,
    pretrain_mlm, Checkpoint, TrainConfig,
};
use emoclass::nn::EncoderConfig;
use emoclass::splits::{build_splits, SplitSpec};
use emoclass::tokenizer::Vocab;
use emoclass::{synth, EmotionLabel};

/// Environment variable naming the root directory for experiment runs;
/// relative `run_dir` paths in a config resolve under it.
const RUN_ROOT_ENV: &str = "EMOCLASS_RUN_ROOT";

#[derive(Parser)]
#[command(name = "emoclass", version, about = "Emotion classification for short social-media text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a raw tagged corpus: normalize markup, drop non-English posts,
    /// map tags to labels, filter short posts, deduplicate, remove memes.
    Preprocess(PreprocessArgs),
    /// Build leakage-free train/dev/random/user/temporal splits.
    Split(SplitArgs),
    /// Pre-train a masked language model, weighting lexicon emotion words.
    Pretrain(PretrainArgs),
    /// Train a linear classifier head on frozen encoder features.
    Probe(ProbeArgs),
    /// Fine-tune encoder and head with the joint smoothed-CE + contrastive loss.
    Finetune(FinetuneArgs),
    /// Average the weights of two checkpoints ("model soup").
    Soup(SoupArgs),
    /// Classify texts with a trained checkpoint.
    Predict(PredictArgs),
    /// Lexicon dictionary baseline: per-label one-vs-rest F1.
    BaselineDict(BaselineDictArgs),
    /// NBSVM baseline: train on labeled posts, report per-class F1.
    BaselineNbsvm(BaselineNbsvmArgs),
    /// Score predictions against gold labels with bootstrap intervals.
    Evaluate(EvaluateArgs),
    /// Average model ranks across datasets from a score matrix CSV.
    Rank(RankArgs),
    /// Deterministically sample misclassified posts per gold label.
    SampleErrors(SampleErrorsArgs),
    /// Explain one prediction with perturbation-based token attribution.
    Explain(ExplainArgs),
    /// Run the full experiment pipeline from a TOML config file.
    Run(RunArgs),
    /// Generate a synthetic corpus, lexicon, and evaluation sets.
    Synth(SynthArgs),
    /// Mask the emotion slot of "I felt ... when/because ..." sentences.
    PrepareEnisear(PrepareEnisearArgs),
}

fn main() {
    if let Err(e) = dispatch(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Split(args) => cmd_split(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Probe(args) => cmd_probe(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Soup(args) => cmd_soup(args),
        Command::Predict(args) => cmd_predict(args),
        Command::BaselineDict(args) => cmd_baseline_dict(args),
        Command::BaselineNbsvm(args) => cmd_baseline_nbsvm(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Rank(args) => cmd_rank(args),
        Command::SampleErrors(args) => cmd_sample_errors(args),
        Command::Explain(args) => cmd_explain(args),
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::PrepareEnisear(args) => cmd_prepare_enisear(args),
    }
}

// ---------------------------------------------------------------------------
// Shared input handling

/// A JSONL record from any of the pipeline's labeled formats: cleaned posts,
/// minimal `{text, label}` pairs, or prediction files.
#[derive(Debug, Deserialize)]
struct FlexRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    gold: Option<String>,
    #[serde(default)]
    predicted: Option<String>,
}

/// Parse a label name: canonical five-class names first, then the shared
/// out-of-domain aliases (joy, sad, angry, afraid, happy).
fn parse_label(s: &str) -> Result<EmotionLabel> {
    EmotionLabel::parse(s)
        .ok()
        .or_else(|| map_ood_label(s))
        .with_context(|| format!("unknown emotion label {s:?}"))
}

fn read_flex(path: &Path) -> Result<Vec<FlexRecord>> {
    read_jsonl::<FlexRecord>(path).with_context(|| format!("reading {}", path.display()))
}

/// Read `(text, label)` pairs from cleaned-post or `{text, label}` JSONL.
fn read_labeled(path: &Path) -> Result<Vec<(String, EmotionLabel)>> {
    let records = read_flex(path)?;
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        let text = r
            .text
            .with_context(|| format!("{}: record {i} has no text field", path.display()))?;
        let raw = r
            .label
            .or(r.gold)
            .with_context(|| format!("{}: record {i} has no label", path.display()))?;
        out.push((text, parse_label(&raw)?));
    }
    if out.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(out)
}

fn read_texts(path: &Path) -> Result<Vec<FlexRecord>> {
    let records = read_flex(path)?;
    for (i, r) in records.iter().enumerate() {
        if r.text.is_none() {
            bail!("{}: record {i} has no text field", path.display());
        }
    }
    if records.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(records)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    Ok(())
}

fn write_text(path: &Path, contents: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Write serialized JSON either to a file or, without `--out`, to stdout.
fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => write_text(path, &(json + "\n")),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn emit_jsonl<T: Serialize>(out: Option<&Path>, values: &[T]) -> Result<()> {
    match out {
        Some(path) => {
            create_parent(path)?;
            write_jsonl(path, values)?;
            Ok(())
        }
        None => {
            for v in values {
                println!("{}", serde_json::to_string(v)?);
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// preprocess

#[derive(Args)]
struct PreprocessArgs {
    /// Raw posts JSONL: {id, user_id, timestamp, tag, text}.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output JSONL of cleaned labeled posts.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// JSON tag-to-label mapping {"Tag": "Label", ...}; defaults to the
    /// built-in 22-tag table.
    #[arg(long, value_name = "FILE")]
    mapping: Option<PathBuf>,
    /// Drop texts repeated verbatim by at least this many distinct users.
    #[arg(long = "meme-k", default_value_t = 10)]
    meme_k: usize,
    /// Minimum content words per post.
    #[arg(long, default_value_t = 3)]
    min_words: usize,
    /// Write per-stage drop counts as JSON.
    #[arg(long, value_name = "FILE")]
    stats: Option<PathBuf>,
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let (raw, malformed): (Vec<RawPost>, usize) = read_jsonl_lenient(&args.input)?;
    let mut config = PipelineConfig {
        min_words: args.min_words,
        meme_user_threshold: args.meme_k,
        ..PipelineConfig::default()
    };
    if let Some(mapping) = &args.mapping {
        config.tag_map = TagMap::from_json_file(mapping)?;
    }
    let (clean, mut stats) = run_pipeline(&raw, &config);
    stats.malformed = malformed;
    create_parent(&args.out)?;
    write_jsonl(&args.out, &clean)?;
    if let Some(stats_path) = &args.stats {
        write_text(stats_path, &serde_json::to_string_pretty(&stats)?)?;
    }
    eprintln!(
        "kept {} of {} records ({} malformed) -> {}",
        stats.kept,
        stats.input_records + malformed,
        malformed,
        args.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// split

#[derive(Args)]
struct SplitArgs {
    /// Cleaned posts JSONL.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// TOML split spec (fractions and seed); defaults to 10% per test set.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for one JSONL per split plus manifest.json.
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: PathBuf,
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let posts: Vec<emoclass::corpus::CleanPost> = read_jsonl(&args.input)?;
    let mut spec = match &args.spec {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str::<SplitSpec>(&raw)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => SplitSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let result = build_splits(&posts, &spec)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for (name, set) in result.named_sets() {
        write_jsonl(&args.out_dir.join(format!("{name}.jsonl")), set)?;
    }
    write_text(
        &args.out_dir.join("manifest.json"),
        &serde_json::to_string_pretty(&result.manifest)?,
    )?;
    for (name, set) in result.named_sets() {
        eprintln!("{name}: {} posts", set.len());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// pretrain / probe / finetune / soup / predict

/// Hyperparameter overrides shared by the training commands. Unset flags
/// keep the documented defaults.
#[derive(Args)]
struct TrainOverrides {
    /// Master seed for initialization, batching, masking, and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Pre-training learning rate (default 5e-5).
    #[arg(long)]
    lr: Option<f32>,
    /// Pre-training batch size (default 128).
    #[arg(long)]
    batch: Option<usize>,
    /// Pre-training steps (default 5000).
    #[arg(long)]
    steps: Option<usize>,
    /// Record the loss every N steps (default 50).
    #[arg(long = "log-every")]
    log_every: Option<usize>,
    /// Probe learning rate (default 5e-4).
    #[arg(long = "probe-lr")]
    probe_lr: Option<f32>,
    /// Probe steps (default 1000).
    #[arg(long = "probe-steps")]
    probe_steps: Option<usize>,
    /// Probe batch size (default 64).
    #[arg(long = "probe-batch")]
    probe_batch: Option<usize>,
    /// Fine-tune learning rate (default 1e-5).
    #[arg(long = "ft-lr")]
    ft_lr: Option<f32>,
    /// Fine-tune weight decay (default 0.01).
    #[arg(long = "weight-decay")]
    weight_decay: Option<f32>,
    /// Label smoothing for probe and fine-tune (default 0.1).
    #[arg(long = "label-smoothing")]
    label_smoothing: Option<f64>,
    /// Fine-tune epochs (default 5).
    #[arg(long)]
    epochs: Option<usize>,
    /// Examples per joint-loss batch (default 256).
    #[arg(long = "effective-batch")]
    effective_batch: Option<usize>,
    /// Contrastive weight in the joint loss (default 0.9).
    #[arg(long)]
    lambda: Option<f64>,
    /// Contrastive temperature (default 0.3).
    #[arg(long)]
    tau: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lr {
            cfg.pretrain.lr = v;
        }
        if let Some(v) = self.batch {
            cfg.pretrain.batch = v;
        }
        if let Some(v) = self.steps {
            cfg.pretrain.steps = v;
        }
        if let Some(v) = self.log_every {
            cfg.pretrain.log_every = v;
        }
        if let Some(v) = self.probe_lr {
            cfg.probe.lr = v;
        }
        if let Some(v) = self.probe_steps {
            cfg.probe.steps = v;
        }
        if let Some(v) = self.probe_batch {
            cfg.probe.batch = v;
        }
        if let Some(v) = self.ft_lr {
            cfg.finetune.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.finetune.weight_decay = v;
        }
        if let Some(v) = self.label_smoothing {
            cfg.finetune.label_smoothing = v;
        }
        if let Some(v) = self.epochs {
            cfg.finetune.epochs = v;
        }
        if let Some(v) = self.effective_batch {
            cfg.finetune.effective_batch = v;
        }
        if let Some(v) = self.lambda {
            cfg.contrastive.lambda = v;
        }
        if let Some(v) = self.tau {
            cfg.contrastive.tau = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EncoderOverrides {
    /// Transformer layers (default 2).
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width (default 128).
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention heads (default 4).
    #[arg(long)]
    heads: Option<usize>,
    /// Feed-forward width (default 256).
    #[arg(long = "feed-forward")]
    feed_forward: Option<usize>,
    /// Maximum vocabulary size (default 8000).
    #[arg(long = "vocab-size")]
    vocab_size: Option<usize>,
    /// Maximum sequence length (default 128).
    #[arg(long = "max-len")]
    max_len: Option<usize>,
    /// Embedding dropout (default 0.1).
    #[arg(long = "embed-dropout")]
    embed_dropout: Option<f32>,
}

impl EncoderOverrides {
    fn any_set(&self) -> bool {
        self.layers.is_some()
            || self.hidden.is_some()
            || self.heads.is_some()
            || self.feed_forward.is_some()
            || self.vocab_size.is_some()
            || self.max_len.is_some()
            || self.embed_dropout.is_some()
    }

    fn apply(&self) -> EncoderConfig {
        let mut cfg = EncoderConfig::default();
        if let Some(v) = self.layers {
            cfg.layers = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.feed_forward {
            cfg.feed_forward = v;
        }
        if let Some(v) = self.vocab_size {
            cfg.vocab_size = v;
        }
        if let Some(v) = self.max_len {
            cfg.max_len = v;
        }
        if let Some(v) = self.embed_dropout {
            cfg.embed_dropout = v;
        }
        cfg
    }
}

#[derive(Args)]
struct PretrainArgs {
    /// Training posts JSONL (cleaned posts or {text, ...} records).
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Continue from this pre-training checkpoint instead of initializing
    /// fresh weights. Its vocabulary and encoder shape carry over, so
    /// encoder flags are rejected alongside this option.
    #[arg(long, value_name = "DIR")]
    base: Option<PathBuf>,
    /// Emotion lexicon TSV; its words get the elevated masking rate.
    /// Required unless --uniform.
    #[arg(long, value_name = "FILE")]
    lexicon: Option<PathBuf>,
    /// Mask all tokens at the base rate, ignoring the lexicon.
    #[arg(long)]
    uniform: bool,
    /// Masking rate for lexicon emotion words (default 0.5).
    #[arg(long = "p-emotion")]
    p_emotion: Option<f64>,
    /// Masking rate for all other tokens (default 0.15).
    #[arg(long = "p-other")]
    p_other: Option<f64>,
    /// Output checkpoint directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    train_overrides: TrainOverrides,
    #[command(flatten)]
    encoder_overrides: EncoderOverrides,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn cmd_pretrain(args: PretrainArgs) -> Result<()> {
    let records = read_texts(&args.train)?;
    let texts: Vec<String> = records.into_iter().map(|r| r.text.unwrap()).collect();
    let cfg = args.train_overrides.apply()?;

    let mut masking = emoclass::emlm::MaskingConfig::default();
    if let Some(p) = args.p_emotion {
        masking.p_emotion = p;
    }
    if let Some(p) = args.p_other {
        masking.p_other = p;
    }
    let emotion_words: HashSet<String> = if args.uniform {
        masking.p_emotion = masking.p_other;
        HashSet::new()
    } else {
        let path = args
            .lexicon
            .as_ref()
            .context("--lexicon is required unless --uniform is set")?;
        load_lexicon(path)?.word_set(None)
    };
    masking.validate()?;

    let (ckpt, history) = if let Some(base_dir) = &args.base {
        anyhow::ensure!(
            !args.encoder_overrides.any_set(),
            "encoder flags conflict with --base: the checkpoint fixes the encoder shape"
        );
        let base = Checkpoint::load(base_dir)
            .with_context(|| format!("loading base checkpoint {}", base_dir.display()))?;
        emoclass::model::continue_pretrain_mlm(
            &base,
            &texts,
            &emotion_words,
            &cfg,
            &masking,
            !args.quiet,
        )?
    } else {
        let encoder_cfg = args.encoder_overrides.apply();
        let vocab = Vocab::fit(texts.iter().map(|t| t.as_str()), encoder_cfg.vocab_size)?;
        pretrain_mlm(
            &texts,
            &vocab,
            &emotion_words,
            &encoder_cfg,
            &cfg,
            &masking,
            !args.quiet,
        )?
    };
    ckpt.save(&args.out)?;
    write_text(
        &args.out.join("history.json"),
        &serde_json::to_string_pretty(&history)?,
    )?;
    if let Some((step, loss)) = history.last() {
        eprintln!("step {step}: loss {loss:.4} -> {}", args.out.display());
    }
    Ok(())
}

#[derive(Args)]
struct ProbeArgs {
    /// Pre-trained base checkpoint directory.
    #[arg(long, value_name = "DIR")]
    base: PathBuf,
    /// Labeled training posts JSONL.
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Output checkpoint directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    train_overrides: TrainOverrides,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn cmd_probe(args: ProbeArgs) -> Result<()> {
    let base = Checkpoint::load(&args.base)?;
    let data = read_labeled(&args.train)?;
    let cfg = args.train_overrides.apply()?;
    let probed = linear_probe(&base, &data, &cfg, !args.quiet)?;
    probed.save(&args.out)?;
    eprintln!("probe -> {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct FinetuneArgs {
    /// Probed checkpoint directory (encoder plus classifier head).
    #[arg(long, value_name = "DIR")]
    base: PathBuf,
    /// Labeled training posts JSONL.
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Labeled development posts JSONL for per-epoch macro-F1 tracking.
    #[arg(long, value_name = "FILE")]
    dev: Option<PathBuf>,
    /// Output checkpoint directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[command(flatten)]
    train_overrides: TrainOverrides,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

fn cmd_finetune(args: FinetuneArgs) -> Result<()> {
    let base = Checkpoint::load(&args.base)?;
    let train = read_labeled(&args.train)?;
    let dev = match &args.dev {
        Some(path) => read_labeled(path)?,
        None => Vec::new(),
    };
    let cfg = args.train_overrides.apply()?;
    let (tuned, history) = fine_tune(&base, &train, &dev, &cfg, !args.quiet)?;
    tuned.save(&args.out)?;
    write_text(
        &args.out.join("history.json"),
        &serde_json::to_string_pretty(&history)?,
    )?;
    if let Some((epoch, f1)) = history.last() {
        eprintln!("epoch {epoch}: dev macro-F1 {f1:.2} -> {}", args.out.display());
    } else {
        eprintln!("fine-tune -> {}", args.out.display());
    }
    Ok(())
}

#[derive(Args)]
struct SoupArgs {
    /// First checkpoint directory.
    #[arg(long, value_name = "DIR")]
    a: PathBuf,
    /// Second checkpoint directory.
    #[arg(long, value_name = "DIR")]
    b: PathBuf,
    /// Output checkpoint directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn cmd_soup(args: SoupArgs) -> Result<()> {
    let a = Checkpoint::load(&args.a)?;
    let b = Checkpoint::load(&args.b)?;
    let averaged = average_weights(&a, &b)?;
    averaged.save(&args.out)?;
    eprintln!("averaged weights -> {}", args.out.display());
    Ok(())
}

/// One classified input, carrying gold metadata through when present.
#[derive(Debug, Serialize)]
struct PredictionLine {
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<EmotionLabel>,
    predicted: EmotionLabel,
    probs: Vec<f32>,
    degenerate: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Classifier checkpoint directory.
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    /// Input JSONL; each record needs a text field.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Output predictions JSONL (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let records = read_texts(&args.input)?;
    let texts: Vec<String> = records.iter().map(|r| r.text.clone().unwrap()).collect();
    let predictions = predict(&ckpt, &texts)?;
    let lines: Vec<PredictionLine> = records
        .into_iter()
        .zip(predictions)
        .map(|(r, p)| {
            let gold = r
                .gold
                .or(r.label)
                .and_then(|s| parse_label(&s).ok());
            PredictionLine {
                id: r.id,
                text: r.text.unwrap(),
                gold,
                predicted: p.label,
                probs: p.probs,
                degenerate: p.degenerate,
            }
        })
        .collect();
    emit_jsonl(args.out.as_deref(), &lines)
}

// ---------------------------------------------------------------------------
// baselines

#[derive(Args)]
struct BaselineDictArgs {
    /// Development posts JSONL; sets the per-category base frequencies.
    #[arg(long, value_name = "FILE")]
    dev: PathBuf,
    /// Labeled test posts JSONL.
    #[arg(long, value_name = "FILE")]
    test: PathBuf,
    /// Emotion lexicon TSV.
    #[arg(long, value_name = "FILE")]
    lexicon: PathBuf,
    /// JSON mapping of lexicon categories to labels {"sadness": "Sadness", ...};
    /// defaults to sadness/anger/fear/positive -> Happiness.
    #[arg(long, value_name = "FILE")]
    cmap: Option<PathBuf>,
    /// Output directory for the fitted model and per-label F1 table.
    #[arg(long, value_name = "DIR")]
    report: PathBuf,
}

fn cmd_baseline_dict(args: BaselineDictArgs) -> Result<()> {
    let lexicon = load_lexicon(&args.lexicon)?;
    let category_map = match &args.cmap {
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let parsed: indexmap::IndexMap<String, String> = serde_json::from_str(&raw)
                .with_context(|| format!("parsing {}", path.display()))?;
            let mut map = indexmap::IndexMap::new();
            for (category, label) in parsed {
                map.insert(category, EmotionLabel::parse(&label)?);
            }
            CategoryMap(map)
        }
        None => CategoryMap::default_map(),
    };
    let dev_texts: Vec<String> = read_texts(&args.dev)?
        .into_iter()
        .map(|r| r.text.unwrap())
        .collect();
    let test = read_labeled(&args.test)?;

    let model = DictionaryModel::fit(&lexicon, category_map, &dev_texts)?;
    let per_label = model.evaluate(&lexicon, &test)?;

    std::fs::create_dir_all(&args.report)
        .with_context(|| format!("creating {}", args.report.display()))?;
    model.save(&args.report.join("dictionary.json"))?;
    let mut csv = String::from("label,f1\n");
    for (label, f1) in &per_label {
        csv.push_str(&format!("{label},{f1:.2}\n"));
    }
    write_text(&args.report.join("dictionary_f1.csv"), &csv)?;
    for (label, f1) in &per_label {
        eprintln!("{label}: F1 {f1:.2}");
    }
    Ok(())
}

#[derive(Args)]
struct BaselineNbsvmArgs {
    /// Labeled training posts JSONL.
    #[arg(long, value_name = "FILE")]
    train: PathBuf,
    /// Labeled test posts JSONL.
    #[arg(long, value_name = "FILE")]
    test: PathBuf,
    /// Output directory for the model, predictions, and F1 table.
    #[arg(long, value_name = "DIR")]
    report: PathBuf,
    /// Maximum bag-of-words vocabulary (default 64000).
    #[arg(long = "vocab-size")]
    vocab_size: Option<usize>,
    /// Weight-interpolation strength (default 0.25).
    #[arg(long)]
    beta: Option<f64>,
    /// Margin-objective cost (default 1.0).
    #[arg(long)]
    cost: Option<f64>,
    /// Seed for the per-sweep coordinate permutation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn cmd_baseline_nbsvm(args: BaselineNbsvmArgs) -> Result<()> {
    let train = read_labeled(&args.train)?;
    let test = read_labeled(&args.test)?;
    let mut config = NbsvmConfig {
        seed: args.seed,
        ..NbsvmConfig::default()
    };
    if let Some(v) = args.vocab_size {
        config.vocab_size = v;
    }
    if let Some(v) = args.beta {
        config.beta = v;
    }
    if let Some(v) = args.cost {
        config.cost = v;
    }
    let model = NbsvmModel::train(&train, config)?;

    let golds: Vec<EmotionLabel> = test.iter().map(|(_, l)| *l).collect();
    let preds: Vec<EmotionLabel> = test.iter().map(|(t, _)| model.predict(t)).collect();
    let report = macro_f1(&golds, &preds, &EmotionLabel::ALL)?;

    std::fs::create_dir_all(&args.report)
        .with_context(|| format!("creating {}", args.report.display()))?;
    model.save(&args.report.join("nbsvm.json"))?;
    let records: Vec<PredictionRecord> = test
        .iter()
        .zip(&preds)
        .enumerate()
        .map(|(i, ((text, gold), pred))| PredictionRecord {
            id: format!("test-{i:06}"),
            text: text.clone(),
            gold: *gold,
            predicted: *pred,
        })
        .collect();
    write_jsonl(&args.report.join("predictions.jsonl"), &records)?;
    let mut csv = String::from("label,f1\n");
    for (label, f1) in &report.per_class {
        csv.push_str(&format!("{label},{f1:.2}\n"));
    }
    csv.push_str(&format!("macro,{:.2}\n", report.macro_f1));
    write_text(&args.report.join("nbsvm_f1.csv"), &csv)?;
    eprintln!("macro-F1 {:.2}", report.macro_f1);
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate / rank / sample-errors

#[derive(Clone, Copy, ValueEnum)]
enum LabelSpace {
    /// All five labels.
    #[value(name = "5class")]
    Five,
    /// Shared out-of-domain space: Affection folds into Happiness.
    #[value(name = "4class")]
    Four,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions JSONL (predicted or label field), aligned with --gold.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Gold labels JSONL (label or gold field).
    #[arg(long, value_name = "FILE")]
    gold: PathBuf,
    /// Label space to score in.
    #[arg(long, value_enum, default_value = "5class")]
    labels: LabelSpace,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Confidence level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Resampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for score tables (stdout summary only when omitted).
    #[arg(long, value_name = "DIR")]
    report: Option<PathBuf>,
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let gold_records = read_flex(&args.gold)?;
    let pred_records = read_flex(&args.pred)?;
    if gold_records.len() != pred_records.len() {
        bail!(
            "gold and prediction files differ in length: {} vs {}",
            gold_records.len(),
            pred_records.len()
        );
    }
    let fold = |label: EmotionLabel| match args.labels {
        LabelSpace::Five => label,
        LabelSpace::Four => {
            if label == EmotionLabel::Affection {
                EmotionLabel::Happiness
            } else {
                label
            }
        }
    };
    let mut golds = Vec::with_capacity(gold_records.len());
    for (i, r) in gold_records.into_iter().enumerate() {
        let raw = r
            .gold
            .or(r.label)
            .with_context(|| format!("{}: record {i} has no label", args.gold.display()))?;
        golds.push(fold(parse_label(&raw)?));
    }
    let mut preds = Vec::with_capacity(pred_records.len());
    for (i, r) in pred_records.into_iter().enumerate() {
        let raw = r
            .predicted
            .or(r.label)
            .with_context(|| format!("{}: record {i} has no prediction", args.pred.display()))?;
        preds.push(fold(parse_label(&raw)?));
    }
    let label_set: &[EmotionLabel] = match args.labels {
        LabelSpace::Five => &EmotionLabel::ALL,
        LabelSpace::Four => &EmotionLabel::FOUR_CLASS,
    };

    let report = bootstrap_ci(&golds, &preds, label_set, args.bootstrap, args.level, args.seed)?;
    let ci = report.ci.get("macro_f1").copied();
    match ci {
        Some(ci) => eprintln!(
            "macro-F1 {:.2} [{:.2}, {:.2}] ({} replicates, level {})",
            report.point.macro_f1, ci.lo, ci.hi, report.replicates, report.level
        ),
        None => eprintln!("macro-F1 {:.2}", report.point.macro_f1),
    }

    if let Some(dir) = &args.report {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let dataset = args
            .gold
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "eval".to_string());
        let mut grid = EvalGrid::default();
        grid.insert(&dataset, "model", CellScore::from_bootstrap(&report));
        write_text(&dir.join("scores.csv"), &grid.to_csv()?)?;
        write_text(&dir.join("scores.md"), &grid.to_markdown())?;
        write_text(&dir.join("per_class.csv"), &grid.per_class_csv()?)?;
        write_text(
            &dir.join("bootstrap.json"),
            &serde_json::to_string_pretty(&report)?,
        )?;
    }
    Ok(())
}

#[derive(Args)]
struct RankArgs {
    /// Score matrix CSV: header `model,<dataset>,...`, one row per model.
    #[arg(long, value_name = "FILE")]
    scores: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    let raw = std::fs::read_to_string(&args.scores)
        .with_context(|| format!("reading {}", args.scores.display()))?;
    let mut lines = raw.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().context("empty score matrix")?;
    let datasets: Vec<String> = header
        .split(',')
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    if datasets.is_empty() {
        bail!("score matrix header has no dataset columns");
    }
    let mut models = Vec::new();
    let mut scores = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',').map(str::trim);
        let model = fields.next().context("missing model name")?.to_string();
        let row: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .with_context(|| format!("row {}: bad score {f:?}", i + 2))
            })
            .collect::<Result<_>>()?;
        if row.len() != datasets.len() {
            bail!(
                "row {}: expected {} scores, found {}",
                i + 2,
                datasets.len(),
                row.len()
            );
        }
        models.push(model);
        scores.push(row);
    }
    let matrix = ScoreMatrix {
        models,
        datasets,
        scores,
    };
    let ranks = average_rank(&matrix)?;
    let csv = emoclass::eval::report::ranks_to_csv(&ranks)?;
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[derive(Args)]
struct SampleErrorsArgs {
    /// Predictions JSONL with id, text, gold, and predicted fields.
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Misclassified posts to sample per gold label.
    #[arg(long = "per-label", default_value_t = 10)]
    per_label: usize,
    /// Sampling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn cmd_sample_errors(args: SampleErrorsArgs) -> Result<()> {
    let records: Vec<PredictionRecord> = read_jsonl(&args.pred)?;
    let sampled = sample_errors(&records, args.per_label, args.seed);
    eprintln!(
        "{} errors sampled from {} predictions",
        sampled.len(),
        records.len()
    );
    emit_jsonl(args.out.as_deref(), &sampled)
}

// ---------------------------------------------------------------------------
// explain

#[derive(Args)]
struct ExplainArgs {
    /// Classifier checkpoint directory.
    #[arg(long, value_name = "DIR")]
    ckpt: PathBuf,
    /// Text to explain.
    #[arg(long)]
    text: String,
    /// Target class whose probability the explanation attributes.
    #[arg(long = "class", value_name = "LABEL")]
    class: String,
    /// Perturbation samples.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Proximity kernel width (default 0.75 * sqrt(token count)).
    #[arg(long = "kernel-width")]
    kernel_width: Option<f64>,
    /// Ridge regularization of the linear surrogate (minimum 1e-6).
    #[arg(long, default_value_t = 1.0)]
    ridge: f64,
    /// Perturbation seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output JSON file (stdout when omitted).
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

fn cmd_explain(args: ExplainArgs) -> Result<()> {
    let target = parse_label(&args.class)?;
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let (encoder, head) = build_classifier(&ckpt)?;
    let score = |text: &str| -> emoclass::Result<Vec<f64>> {
        let prediction = predict_with(&encoder, &head, &ckpt.vocab, &[text.to_string()])
            .pop()
            .expect("one prediction per text");
        Ok(prediction.probs.iter().map(|p| *p as f64).collect())
    };
    let explanation = attribution::explain(
        score,
        &args.text,
        target,
        args.samples,
        args.kernel_width,
        args.ridge.max(MIN_RIDGE),
        args.seed,
    )?;
    let mut ranked: Vec<(&String, &f64)> = explanation
        .tokens
        .iter()
        .zip(explanation.weights.iter())
        .collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    for (token, weight) in ranked.iter().take(10) {
        eprintln!("{weight:>+9.4}  {token}");
    }
    emit_json(args.out.as_deref(), &explanation)
}

// ---------------------------------------------------------------------------
// run

#[derive(Args)]
struct RunArgs {
    /// Experiment TOML config file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Run only this stage (preprocess, split, pretrain, probe, finetune,
    /// soup, evaluate); its inputs must already exist.
    #[arg(long, value_name = "NAME")]
    stage: Option<String>,
    /// Rerun stages even when cached outputs match the config.
    #[arg(long)]
    force: bool,
    /// Suppress per-stage progress output.
    #[arg(long)]
    quiet: bool,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = ExperimentConfig::from_toml_file(&args.config)?;
    if config.paths.run_dir.is_relative() {
        if let Ok(root) = std::env::var(RUN_ROOT_ENV) {
            if !root.is_empty() {
                config.paths.run_dir = PathBuf::from(root).join(&config.paths.run_dir);
            }
        }
    }
    let summary = run_experiment(
        &config,
        &RunOptions {
            force: args.force,
            stage: args.stage,
            verbose: !args.quiet,
        },
    )?;
    for stage in &summary.stages {
        let status = if stage.cached { "cached" } else { "ran" };
        eprintln!("{:<12} {status:<7} {} ms", stage.name, stage.duration_ms);
    }
    println!("{}", summary.run_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// synth / prepare-enisear

#[derive(Args)]
struct SynthArgs {
    /// Output directory for corpus.jsonl, lexicon.tsv, ood.jsonl, templates.jsonl.
    #[arg(long = "out-dir", value_name = "DIR")]
    out_dir: PathBuf,
    /// Raw posts to generate.
    #[arg(long, default_value_t = 5000)]
    posts: usize,
    /// Distinct user accounts.
    #[arg(long, default_value_t = 200)]
    users: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Out-of-domain sentences to generate.
    #[arg(long, default_value_t = 300)]
    ood: usize,
    /// Template sentences to generate.
    #[arg(long, default_value_t = 20)]
    templates: usize,
    /// Skip the dirty records that exercise the cleaning pipeline.
    #[arg(long = "no-noise")]
    no_noise: bool,
}

#[derive(Serialize)]
struct TextLabel {
    text: String,
    label: String,
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let posts = synth::generate_raw(&synth::SynthConfig {
        posts: args.posts,
        users: args.users,
        seed: args.seed,
        noise: !args.no_noise,
        ..synth::SynthConfig::default()
    });
    write_jsonl(&args.out_dir.join("corpus.jsonl"), &posts)?;
    save_lexicon(&synth::synth_lexicon(), &args.out_dir.join("lexicon.tsv"))?;
    let ood: Vec<TextLabel> = synth::generate_ood(args.ood, args.seed)
        .into_iter()
        .map(|(text, label)| TextLabel { text, label })
        .collect();
    write_jsonl(&args.out_dir.join("ood.jsonl"), &ood)?;
    let templates: Vec<TextLabel> = synth::generate_templates(args.templates, args.seed)
        .into_iter()
        .map(|(text, label)| TextLabel { text, label })
        .collect();
    write_jsonl(&args.out_dir.join("templates.jsonl"), &templates)?;
    eprintln!(
        "{} posts, {} out-of-domain sentences, {} templates -> {}",
        args.posts,
        args.ood,
        args.templates,
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Args)]
struct PrepareEnisearArgs {
    /// Input JSONL of {text, label} template sentences.
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Emotion lexicon TSV used to locate the emotion word.
    #[arg(long, value_name = "FILE")]
    lexicon: PathBuf,
    /// Output JSONL with the emotion slot replaced by <mask>.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PreparedLine {
    text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    modified: bool,
}

fn cmd_prepare_enisear(args: PrepareEnisearArgs) -> Result<()> {
    let words = load_lexicon(&args.lexicon)?.word_set(None);
    let records = read_texts(&args.input)?;
    let mut out = Vec::with_capacity(records.len());
    let mut modified = 0usize;
    for r in records {
        let prepared = prepare_enisear(&r.text.unwrap(), &words);
        modified += prepared.modified as usize;
        out.push(PreparedLine {
            text: prepared.text,
            label: r.label,
            modified: prepared.modified,
        });
    }
    eprintln!("{} of {} sentences masked", modified, out.len());
    emit_jsonl(args.out.as_deref(), &out)
}
