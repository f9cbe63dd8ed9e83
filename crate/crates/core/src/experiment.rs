//! End-to-end experiment runs: preprocess → split → pre-train (a plain
//! masked-LM base plus an emotion-weighted continuation of it) → probe →
//! fine-tune both branches → weight averaging → evaluation against both
//! baselines, with reports.
//!
//! Every stage writes its artifacts under the run directory and stamps them
//! with the configuration hash; a rerun with an unchanged configuration
//! skips every stage, leaving all outputs byte-identical.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::baselines::{CategoryMap, DictionaryModel, NbsvmConfig, NbsvmModel};
use crate::config::{code_version, ExperimentConfig};
use crate::corpus::{CleanPost, PipelineConfig, RawPost, TagMap};
use crate::emlm::MaskingConfig;
use crate::error::{Error, Result};
use crate::eval::report::{CellScore, EvalGrid};
use crate::eval::ood::map_ood_label;
use crate::eval::{average_rank, bootstrap_ci, sample_errors, PredictionRecord, ScoreMatrix};
use crate::jsonl::{read_jsonl, read_jsonl_lenient, write_jsonl};
use crate::label::EmotionLabel;
use crate::lexicon::{load_lexicon, Lexicon};
use crate::model::checkpoint::Checkpoint;
use crate::model::trainer::{
    continue_pretrain_mlm, fine_tune, linear_probe, predict, pretrain_mlm,
};
use crate::seeding::derive_seed;
use crate::splits::{build_splits, SplitResult};
use crate::tokenizer::Vocab;

/// The two pre-training branches. `Uniform` masks every regular token at the
/// base rate; `Emotion` continues from the uniform base and raises the rate
/// for lexicon words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Emotion,
    Uniform,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Emotion, Branch::Uniform];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Emotion => "emotion",
            Branch::Uniform => "uniform",
        }
    }
}

pub const STAGES: [&str; 7] = [
    "preprocess",
    "split",
    "pretrain",
    "probe",
    "finetune",
    "soup",
    "evaluate",
];

/// Column names in the reports.
const MODEL_DICTIONARY: &str = "dictionary";
const MODEL_NBSVM: &str = "nbsvm";
const MODEL_EMOTION: &str = "emotion-mask";
const MODEL_UNIFORM: &str = "uniform-mask";
const MODEL_AVERAGED: &str = "averaged";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub cached: bool,
    pub duration_ms: u128,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub config_hash: String,
    pub code_version: String,
    pub stages: Vec<StageStatus>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageStamp {
    config_hash: String,
    code_version: String,
}

/// Options for [`run_experiment`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Rerun stages even when their stamps match.
    pub force: bool,
    /// Run only this stage (upstream artifacts must already exist).
    pub stage: Option<String>,
    pub verbose: bool,
}

struct RunContext {
    cfg: ExperimentConfig,
    hash: String,
    run_dir: PathBuf,
}

impl RunContext {
    fn corpus_dir(&self) -> PathBuf {
        self.run_dir.join("corpus")
    }
    fn splits_dir(&self) -> PathBuf {
        self.run_dir.join("splits")
    }
    fn checkpoints_dir(&self) -> PathBuf {
        self.run_dir.join("checkpoints")
    }
    fn baselines_dir(&self) -> PathBuf {
        self.run_dir.join("baselines")
    }
    fn reports_dir(&self) -> PathBuf {
        self.run_dir.join("reports")
    }
    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.run_dir.join("stamps").join(format!("{stage}.json"))
    }
    fn checkpoint_dir(&self, stage: &str, branch: Option<Branch>) -> PathBuf {
        match branch {
            Some(b) => self.checkpoints_dir().join(format!("{stage}_{}", b.name())),
            None => self.checkpoints_dir().join(stage),
        }
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let json = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    fn stamp(&self, stage: &str) -> Result<()> {
        self.write_json(
            &self.stamp_path(stage),
            &StageStamp {
                config_hash: self.hash.clone(),
                code_version: code_version(),
            },
        )
    }

    fn is_cached(&self, stage: &str) -> bool {
        let path = self.stamp_path(stage);
        let Ok(raw) = std::fs::read_to_string(&path) else {
            return false;
        };
        let Ok(stamp) = serde_json::from_str::<StageStamp>(&raw) else {
            return false;
        };
        stamp.config_hash == self.hash
    }

    fn load_split(&self, name: &str) -> Result<Vec<CleanPost>> {
        read_jsonl(&self.splits_dir().join(format!("{name}.jsonl")))
    }

    fn load_lexicon(&self) -> Result<Lexicon> {
        load_lexicon(&self.cfg.paths.lexicon)
    }
}

fn pairs(posts: &[CleanPost]) -> Vec<(String, EmotionLabel)> {
    posts
        .iter()
        .map(|p| (p.text.clone(), p.label))
        .collect()
}

fn texts(posts: &[CleanPost]) -> Vec<String> {
    posts.iter().map(|p| p.text.clone()).collect()
}

/// Run (or resume) a full experiment. Returns the per-stage statuses.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    if let Some(stage) = &options.stage {
        if !STAGES.contains(&stage.as_str()) {
            return Err(Error::Config(format!(
                "unknown stage {stage}; expected one of {}",
                STAGES.join(", ")
            )));
        }
    }
    let cfg = config.resolved();
    let ctx = RunContext {
        hash: config.hash(),
        run_dir: cfg.paths.run_dir.clone(),
        cfg,
    };
    std::fs::create_dir_all(&ctx.run_dir).map_err(|e| Error::io(&ctx.run_dir, e))?;
    // Keep a copy of the configuration as given; the derived per-stage seeds
    // are reproducible from it and can exceed TOML's integer range.
    std::fs::write(
        ctx.run_dir.join("config.toml"),
        config.to_toml_string()?,
    )
    .map_err(|e| Error::io(&ctx.run_dir.join("config.toml"), e))?;

    let mut statuses = Vec::new();
    for stage in STAGES {
        if let Some(only) = &options.stage {
            if only != stage {
                continue;
            }
        }
        let cached = !options.force && ctx.is_cached(stage);
        let start = Instant::now();
        if !cached {
            if options.verbose {
                eprintln!("[{stage}] running");
            }
            run_stage(&ctx, stage, options.verbose).map_err(|e| Error::Stage {
                stage: stage.to_string(),
                run_dir: ctx.run_dir.display().to_string(),
                message: e.to_string(),
            })?;
            ctx.stamp(stage)?;
        } else if options.verbose {
            eprintln!("[{stage}] cached, skipping");
        }
        statuses.push(StageStatus {
            name: stage.to_string(),
            cached,
            duration_ms: start.elapsed().as_millis(),
        });
    }

    let summary = RunSummary {
        run_dir: ctx.run_dir.clone(),
        config_hash: ctx.hash.clone(),
        code_version: code_version(),
        stages: statuses,
    };
    ctx.write_json(&ctx.run_dir.join("run.json"), &summary)?;
    Ok(summary)
}

fn run_stage(ctx: &RunContext, stage: &str, verbose: bool) -> Result<()> {
    match stage {
        "preprocess" => stage_preprocess(ctx),
        "split" => stage_split(ctx),
        "pretrain" => stage_pretrain(ctx, verbose),
        "probe" => stage_probe(ctx, verbose),
        "finetune" => stage_finetune(ctx, verbose),
        "soup" => stage_soup(ctx),
        "evaluate" => stage_evaluate(ctx),
        other => Err(Error::Config(format!("unknown stage {other}"))),
    }
}

fn stage_preprocess(ctx: &RunContext) -> Result<()> {
    let (raw, malformed): (Vec<RawPost>, usize) = read_jsonl_lenient(&ctx.cfg.paths.corpus)?;
    let mut pipeline = PipelineConfig {
        min_words: ctx.cfg.corpus.min_words,
        meme_user_threshold: ctx.cfg.corpus.meme_user_threshold,
        ..PipelineConfig::default()
    };
    if let Some(path) = &ctx.cfg.paths.tag_map {
        pipeline.tag_map = TagMap::from_json_file(path)?;
    }
    let (clean, mut stats) = crate::corpus::run_pipeline(&raw, &pipeline);
    stats.malformed = malformed;
    let dir = ctx.corpus_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_jsonl(&dir.join("clean.jsonl"), &clean)?;
    ctx.write_json(&dir.join("stats.json"), &stats)
}

fn stage_split(ctx: &RunContext) -> Result<()> {
    let clean: Vec<CleanPost> = read_jsonl(&ctx.corpus_dir().join("clean.jsonl"))?;
    let result: SplitResult = build_splits(&clean, &ctx.cfg.split)?;
    let dir = ctx.splits_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (name, posts) in result.named_sets() {
        write_jsonl(&dir.join(format!("{name}.jsonl")), posts)?;
    }
    ctx.write_json(&dir.join("manifest.json"), &result.manifest)
}

fn branch_masking(cfg: &ExperimentConfig, branch: Branch) -> MaskingConfig {
    match branch {
        Branch::Emotion => cfg.masking.clone(),
        // The uniform branch masks every position at the base rate.
        Branch::Uniform => MaskingConfig {
            p_emotion: cfg.masking.p_other,
            ..cfg.masking.clone()
        },
    }
}

fn stage_pretrain(ctx: &RunContext, verbose: bool) -> Result<()> {
    let train = ctx.load_split("train")?;
    let train_texts = texts(&train);
    let vocab = Vocab::fit(
        train_texts.iter().map(|t| t.as_str()),
        ctx.cfg.encoder.vocab_size,
    )?;
    let lexicon = ctx.load_lexicon()?;

    // Plain branch first: a scratch masked-LM pre-training with every token
    // at the base rate. The emotion branch then continues from it with the
    // lexicon-weighted masking, so both fine-tuned models descend from the
    // same base weights — the property their later average depends on.
    let (uniform_ckpt, uniform_history) = pretrain_mlm(
        &train_texts,
        &vocab,
        &HashSet::new(),
        &ctx.cfg.encoder,
        &ctx.cfg.train,
        &branch_masking(&ctx.cfg, Branch::Uniform),
        verbose,
    )?;
    let uniform_dir = ctx.checkpoint_dir("pretrain", Some(Branch::Uniform));
    uniform_ckpt.save(&uniform_dir)?;
    ctx.write_json(&uniform_dir.join("history.json"), &uniform_history)?;

    let (emotion_ckpt, emotion_history) = continue_pretrain_mlm(
        &uniform_ckpt,
        &train_texts,
        &lexicon.word_set(None),
        &ctx.cfg.train,
        &branch_masking(&ctx.cfg, Branch::Emotion),
        verbose,
    )?;
    let emotion_dir = ctx.checkpoint_dir("pretrain", Some(Branch::Emotion));
    emotion_ckpt.save(&emotion_dir)?;
    ctx.write_json(&emotion_dir.join("history.json"), &emotion_history)?;
    Ok(())
}

fn stage_probe(ctx: &RunContext, verbose: bool) -> Result<()> {
    let train = pairs(&ctx.load_split("train")?);
    for branch in Branch::BOTH {
        let base = Checkpoint::load(&ctx.checkpoint_dir("pretrain", Some(branch)))?;
        let probed = linear_probe(&base, &train, &ctx.cfg.train, verbose)?;
        probed.save(&ctx.checkpoint_dir("probe", Some(branch)))?;
    }
    Ok(())
}

fn stage_finetune(ctx: &RunContext, verbose: bool) -> Result<()> {
    let train = pairs(&ctx.load_split("train")?);
    let dev = pairs(&ctx.load_split("dev")?);
    for branch in Branch::BOTH {
        let probed = Checkpoint::load(&ctx.checkpoint_dir("probe", Some(branch)))?;
        let (tuned, history) = fine_tune(&probed, &train, &dev, &ctx.cfg.train, verbose)?;
        let dir = ctx.checkpoint_dir("finetune", Some(branch));
        tuned.save(&dir)?;
        ctx.write_json(&dir.join("history.json"), &history)?;
    }
    Ok(())
}

fn stage_soup(ctx: &RunContext) -> Result<()> {
    let a = Checkpoint::load(&ctx.checkpoint_dir("finetune", Some(Branch::Emotion)))?;
    let b = Checkpoint::load(&ctx.checkpoint_dir("finetune", Some(Branch::Uniform)))?;
    let soup = Checkpoint::average(&a, &b)?;
    soup.save(&ctx.checkpoint_dir("soup", None))
}

/// One labeled evaluation set, in-domain or out-of-domain.
struct EvalSet {
    name: String,
    data: Vec<(String, EmotionLabel)>,
    /// Out-of-domain sets score on the four-class space: their gold labels
    /// are never Affection, so model predictions of Affection fold into
    /// Happiness and the macro average runs over four classes.
    label_set: &'static [EmotionLabel],
    /// Records whose labels had no counterpart in the shared label space.
    unmapped: usize,
}

impl EvalSet {
    fn fold(&self, label: EmotionLabel) -> EmotionLabel {
        if self.label_set.contains(&label) {
            label
        } else {
            EmotionLabel::Happiness
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct OodRecord {
    text: String,
    label: String,
}

fn load_eval_sets(ctx: &RunContext) -> Result<Vec<EvalSet>> {
    let mut sets = Vec::new();
    for name in ["random_test", "user_test", "temporal_test"] {
        let posts = ctx.load_split(name)?;
        sets.push(EvalSet {
            name: name.to_string(),
            data: pairs(&posts),
            label_set: &EmotionLabel::ALL,
            unmapped: 0,
        });
    }
    for ood in &ctx.cfg.eval.ood {
        let records: Vec<OodRecord> = read_jsonl(&ood.path)?;
        let mut data = Vec::new();
        let mut unmapped = 0usize;
        for r in records {
            match map_ood_label(&r.label) {
                Some(label) => data.push((r.text, label)),
                None => unmapped += 1,
            }
        }
        if data.is_empty() {
            return Err(Error::Eval(format!(
                "out-of-domain set {} has no mappable labels",
                ood.name
            )));
        }
        sets.push(EvalSet {
            name: ood.name.clone(),
            data,
            label_set: &EmotionLabel::FOUR_CLASS,
            unmapped,
        });
    }
    Ok(sets)
}

fn bootstrap_cell(
    golds: &[EmotionLabel],
    preds: &[EmotionLabel],
    label_set: &[EmotionLabel],
    ctx: &RunContext,
) -> Result<CellScore> {
    let report = bootstrap_ci(
        golds,
        preds,
        label_set,
        ctx.cfg.eval.replicates,
        ctx.cfg.eval.level,
        derive_seed(ctx.cfg.seed, "bootstrap"),
    )?;
    Ok(CellScore::from_bootstrap(&report))
}

/// The dictionary baseline scores one-vs-rest per mapped label; its macro
/// cell averages over the set's label space with unmapped labels contributing
/// zero, and carries no bootstrap interval (it makes no single-label
/// predictions).
fn dictionary_cell(per_label: &IndexMap<String, f64>, label_set: &[EmotionLabel]) -> CellScore {
    let mut per_class = IndexMap::new();
    let mut total = 0.0;
    for &label in label_set {
        let f1 = per_label.get(label.name()).copied().unwrap_or(0.0);
        per_class.insert(label.name().to_string(), (f1, None));
        total += f1;
    }
    CellScore {
        macro_f1: total / label_set.len() as f64,
        macro_ci: None,
        per_class,
    }
}

fn prediction_records(
    data: &[(String, EmotionLabel)],
    preds: &[EmotionLabel],
    set_name: &str,
) -> Vec<PredictionRecord> {
    data.iter()
        .zip(preds.iter())
        .enumerate()
        .map(|(i, ((text, gold), pred))| PredictionRecord {
            id: format!("{set_name}-{i:06}"),
            text: text.clone(),
            gold: *gold,
            predicted: *pred,
        })
        .collect()
}

fn stage_evaluate(ctx: &RunContext) -> Result<()> {
    let reports = ctx.reports_dir();
    std::fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    let lexicon = ctx.load_lexicon()?;
    let train = pairs(&ctx.load_split("train")?);
    let dev = ctx.load_split("dev")?;
    let sets = load_eval_sets(ctx)?;
    let mut grid = EvalGrid::default();

    // Dictionary baseline: base frequencies from the dev set.
    let dictionary = DictionaryModel::fit(&lexicon, CategoryMap::default_map(), &texts(&dev))?;
    let baselines_dir = ctx.baselines_dir();
    std::fs::create_dir_all(&baselines_dir).map_err(|e| Error::io(&baselines_dir, e))?;
    dictionary.save(&baselines_dir.join("dictionary.json"))?;
    for set in &sets {
        let per_label = dictionary.evaluate(&lexicon, &set.data)?;
        grid.insert(
            &set.name,
            MODEL_DICTIONARY,
            dictionary_cell(&per_label, set.label_set),
        );
    }

    // NBSVM baseline.
    let nbsvm = NbsvmModel::train(
        &train,
        NbsvmConfig {
            seed: derive_seed(ctx.cfg.seed, "nbsvm"),
            ..NbsvmConfig::default()
        },
    )?;
    nbsvm.save(&baselines_dir.join("nbsvm.json"))?;
    let predictions_dir = reports.join("predictions");
    for set in &sets {
        let golds: Vec<EmotionLabel> = set.data.iter().map(|(_, l)| *l).collect();
        let preds: Vec<EmotionLabel> = set
            .data
            .iter()
            .map(|(t, _)| set.fold(nbsvm.predict(t)))
            .collect();
        grid.insert(
            &set.name,
            MODEL_NBSVM,
            bootstrap_cell(&golds, &preds, set.label_set, ctx)?,
        );
        write_jsonl(
            &predictions_dir.join(MODEL_NBSVM).join(format!("{}.jsonl", set.name)),
            &prediction_records(&set.data, &preds, &set.name),
        )?;
    }

    // The two fine-tuned branches and their weight average.
    let models = [
        (MODEL_EMOTION, ctx.checkpoint_dir("finetune", Some(Branch::Emotion))),
        (MODEL_UNIFORM, ctx.checkpoint_dir("finetune", Some(Branch::Uniform))),
        (MODEL_AVERAGED, ctx.checkpoint_dir("soup", None)),
    ];
    let mut averaged_records: Vec<(String, Vec<PredictionRecord>)> = Vec::new();
    for (model_name, dir) in &models {
        let ckpt = Checkpoint::load(dir)?;
        for set in &sets {
            let set_texts: Vec<String> = set.data.iter().map(|(t, _)| t.clone()).collect();
            let golds: Vec<EmotionLabel> = set.data.iter().map(|(_, l)| *l).collect();
            let preds: Vec<EmotionLabel> = predict(&ckpt, &set_texts)?
                .into_iter()
                .map(|p| set.fold(p.label))
                .collect();
            grid.insert(
                &set.name,
                model_name,
                bootstrap_cell(&golds, &preds, set.label_set, ctx)?,
            );
            let records = prediction_records(&set.data, &preds, &set.name);
            write_jsonl(
                &predictions_dir.join(model_name).join(format!("{}.jsonl", set.name)),
                &records,
            )?;
            if *model_name == MODEL_AVERAGED {
                averaged_records.push((set.name.clone(), records));
            }
        }
    }

    // Reports: score tables, rank aggregation, sampled errors.
    std::fs::write(reports.join("scores.csv"), grid.to_csv()?)
        .map_err(|e| Error::io(&reports.join("scores.csv"), e))?;
    std::fs::write(reports.join("scores.md"), grid.to_markdown())
        .map_err(|e| Error::io(&reports.join("scores.md"), e))?;
    std::fs::write(reports.join("per_class.csv"), grid.per_class_csv()?)
        .map_err(|e| Error::io(&reports.join("per_class.csv"), e))?;
    ctx.write_json(&reports.join("grid.json"), &grid)?;

    let matrix = ScoreMatrix {
        models: grid.models.clone(),
        datasets: grid.datasets.clone(),
        scores: grid
            .models
            .iter()
            .map(|m| {
                grid.datasets
                    .iter()
                    .map(|d| grid.get(d, m).map(|c| c.macro_f1).unwrap_or(f64::NAN))
                    .collect()
            })
            .collect(),
    };
    let ranks = average_rank(&matrix)?;
    std::fs::write(
        reports.join("ranks.csv"),
        crate::eval::report::ranks_to_csv(&ranks)?,
    )
    .map_err(|e| Error::io(&reports.join("ranks.csv"), e))?;

    for (set_name, records) in &averaged_records {
        let sampled = sample_errors(
            records,
            ctx.cfg.eval.error_samples,
            derive_seed(ctx.cfg.seed, "errors"),
        );
        write_jsonl(&reports.join(format!("errors_{set_name}.jsonl")), &sampled)?;
    }

    let unmapped: IndexMap<String, usize> = sets
        .iter()
        .filter(|s| s.unmapped > 0)
        .map(|s| (s.name.clone(), s.unmapped))
        .collect();
    if !unmapped.is_empty() {
        ctx.write_json(&reports.join("unmapped_labels.json"), &unmapped)?;
    }
    Ok(())
}
