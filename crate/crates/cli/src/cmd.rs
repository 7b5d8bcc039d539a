use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use ctlab_annotate::{ServiceConfig, Store};
use ctlab_core::augment::{self, AugmentationBatch, CandidateComment, ExternalText};
use ctlab_core::corpus::{self, Corpus, SplitSpec};
use ctlab_core::diagnostics::{self, ExplainOptions};
use ctlab_core::ensemble::{self, Combiner, EnsembleScores, EnsembleSpec};
use ctlab_core::metrics;
use ctlab_core::preprocess::{self, PreprocessConfig};
use ctlab_core::trainer::{self, tune, ModelConfig};
use ctlab_core::{Checkpoint, DecisionLabel, ProbabilityMatrix, StackerModel, ViolenceClass, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{Cli, Command, Global, Invalid};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.global.config.as_deref(), |k| std::env::var(k).ok())?;
    let ctx = Ctx { cfg, global: cli.global };
    match cli.command {
        Command::Prep(a) => prep(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Ensemble(a) => run_ensemble(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Explain(a) => explain(&ctx, a),
        Command::Diagnose(a) => diagnose(&ctx, a),
        Command::Mine(a) => mine(&ctx, a),
        Command::AnnotateServe(a) => serve(&ctx, a),
        Command::ExportAnnotations(a) => export(&ctx, a),
    }
}

struct Ctx {
    cfg: RunConfig,
    global: Global,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.global.seed.or(self.cfg.seed).unwrap_or(self.cfg.model.seed)
    }

    fn out(&self) -> Result<PathBuf> {
        self.cfg.output_dir(self.global.out.as_deref())
    }

    fn threshold(&self, flag: Option<f64>) -> f64 {
        flag.or(self.cfg.threshold).unwrap_or(0.5)
    }

    fn preprocess(&self) -> Result<PreprocessConfig> {
        let data = preprocess::default_data_dir();
        let shipped = |name: &str| Some(data.join(name)).filter(|p| p.is_file());
        let stopwords = self.cfg.stopwords.clone().or_else(|| shipped("stopwords-bn.txt"));
        let emoji = self.cfg.emoji_map.clone().or_else(|| shipped("emoji-map.json"));
        for p in stopwords.iter().chain(&emoji) {
            require_file(p, "preprocessing resource")?;
        }
        Ok(PreprocessConfig::from_files(
            stopwords.as_deref(),
            emoji.as_deref(),
            self.cfg.model.max_tokens,
            Default::default(),
        )?)
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Invalid(format!("{what} not found: {}", path.display())).into())
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Invalid(format!("{what} not found: {}", path.display())).into())
    }
}

fn pick<T>(flag: Option<T>, cfg: Option<T>, name: &str) -> Result<T> {
    flag.or(cfg)
        .ok_or_else(|| Invalid(format!("missing `--{name}` (or `{}` in the config file)", name.replace('-', "_"))).into())
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    require_file(path, "corpus")?;
    Ok(Corpus::load(path)?)
}

fn load_split(path: &Path) -> Result<SplitSpec> {
    require_file(path, "split file")?;
    Ok(SplitSpec::load(path)?)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Part {
    Train,
    Val,
    Test,
    All,
}

/// Ids and texts to score.
struct Inputs {
    ids: Vec<String>,
    texts: Vec<String>,
}

impl Inputs {
    fn load(path: &Path) -> Result<Self> {
        require_file(path, "input")?;
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let corpus = match Corpus::load(path) {
            Ok(c) => Some(c),
            Err(e) if is_csv => return Err(e.into()),
            Err(_) => None,
        };
        match corpus {
            Some(c) => {
                let (ids, texts) = c.iter().map(|s| (s.id.clone(), s.text.clone())).unzip();
                Ok(Self { ids, texts })
            }
            None => {
                let ext = augment::read_external(path)?;
                let (ids, texts) = ext.into_iter().map(|t| (t.id, t.text)).unzip();
                Ok(Self { ids, texts })
            }
        }
    }

    /// Keeps only the rows of one split part.
    fn restrict(&mut self, split: &SplitSpec, part: Part) {
        let keep: HashSet<&str> = match part {
            Part::Train => split.train.iter().map(String::as_str).collect(),
            Part::Val => split.val.iter().map(String::as_str).collect(),
            Part::Test => split.test.iter().map(String::as_str).collect(),
            Part::All => return,
        };
        let (ids, texts) = self
            .ids
            .iter()
            .zip(&self.texts)
            .filter(|(id, _)| keep.contains(id.as_str()))
            .map(|(i, t)| (i.clone(), t.clone()))
            .unzip();
        self.ids = ids;
        self.texts = texts;
    }

    fn normalize(&mut self, pre: &PreprocessConfig) {
        for t in &mut self.texts {
            *t = pre.normalize(t);
        }
    }

    fn refs(&self) -> Vec<&str> {
        self.texts.iter().map(String::as_str).collect()
    }
}

#[derive(Args, Debug)]
pub struct InputArgs {
    /// Corpus (.csv/.jsonl) or external texts (.jsonl with `text`, or one per line)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Split file used with --part
    #[arg(long)]
    split: Option<PathBuf>,
    /// Which split part to score
    #[arg(long, value_enum)]
    part: Option<Part>,
    /// Apply preprocessing before scoring
    #[arg(long)]
    normalize: bool,
}

fn load_inputs(ctx: &Ctx, a: &InputArgs) -> Result<Inputs> {
    let path = pick(a.input.clone(), ctx.cfg.corpus.clone(), "input")?;
    let mut inputs = Inputs::load(&path)?;
    if let Some(part) = a.part {
        let split_path = pick(a.split.clone(), ctx.cfg.split.clone(), "split")?;
        inputs.restrict(&load_split(&split_path)?, part);
    }
    if a.normalize {
        inputs.normalize(&ctx.preprocess()?);
    }
    Ok(inputs)
}

// ---- prep ----------------------------------------------------------------

#[derive(Args, Debug)]
pub struct PrepArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// CSV `source_id,paraphrased_text` to ingest
    #[arg(long)]
    paraphrases: Option<PathBuf>,
    /// Accepted batch (corpus JSONL) to merge; repeatable
    #[arg(long = "merge")]
    merge: Vec<PathBuf>,
}

#[derive(Serialize)]
struct PrepReport {
    input: usize,
    output: usize,
    dropped_empty: Vec<String>,
    paraphrases_added: usize,
    merged: usize,
    warnings: Vec<String>,
    counts: [usize; NUM_CLASSES],
    distribution: corpus::ClassDistribution,
    violent_distribution: Option<corpus::ClassDistribution>,
}

fn prep(ctx: &Ctx, a: PrepArgs) -> Result<()> {
    let path = pick(a.corpus, ctx.cfg.corpus.clone(), "corpus")?;
    let base = load_corpus(&path)?;
    if let Some(p) = &a.paraphrases {
        require_file(p, "paraphrase file")?;
    }
    for p in &a.merge {
        require_file(p, "batch file")?;
    }
    let pre = ctx.preprocess()?;
    let out = ctx.out()?;
    let input = base.len();

    let mut dropped_empty = Vec::new();
    let mut samples = Vec::with_capacity(base.len());
    for mut s in base.into_samples() {
        s.text = pre.normalize(&s.text);
        if s.text.is_empty() {
            dropped_empty.push(s.id);
        } else {
            samples.push(s);
        }
    }
    let mut corpus = Corpus::new(samples)?;
    let mut warnings = Vec::new();
    let mut paraphrases_added = 0;
    if let Some(p) = &a.paraphrases {
        let pairs = augment::read_paraphrase_pairs(File::open(p).with_context(|| p.display().to_string())?)?;
        let batch = augment::ingest_paraphrases(&corpus, &pairs, &pre)?;
        warnings.extend(batch.warnings.iter().cloned());
        let normalized = normalize_batch(batch, &pre)?;
        paraphrases_added = normalized.len();
        corpus = augment::merge_accepted(&corpus, &normalized)?;
    }
    let mut merged = 0;
    for p in &a.merge {
        let batch = normalize_batch(AugmentationBatch::load(p)?, &pre)?;
        merged += batch.len();
        corpus = augment::merge_accepted(&corpus, &batch)?;
    }
    for id in &dropped_empty {
        warnings.push(format!("sample `{id}` is empty after preprocessing and was dropped"));
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    corpus.save(&out.join("corpus.jsonl"))?;
    let report = PrepReport {
        input,
        output: corpus.len(),
        dropped_empty,
        paraphrases_added,
        merged,
        warnings,
        counts: corpus.counts(),
        distribution: corpus::class_distribution(&corpus, false)?,
        violent_distribution: corpus::class_distribution(&corpus, true).ok(),
    };
    write_json(&out.join("prep_report.json"), &report)?;
    println!(
        "{} samples in, {} out ({} paraphrases, {} merged) -> {}",
        report.input,
        report.output,
        report.paraphrases_added,
        report.merged,
        out.join("corpus.jsonl").display()
    );
    Ok(())
}

fn normalize_batch(batch: AugmentationBatch, pre: &PreprocessConfig) -> Result<AugmentationBatch> {
    let samples = batch
        .samples()
        .iter()
        .cloned()
        .map(|mut s| {
            s.text = pre.normalize(&s.text);
            s
        })
        .filter(|s| !s.text.is_empty())
        .collect();
    Ok(AugmentationBatch::new(samples)?)
}

// ---- split ---------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
}

fn split(ctx: &Ctx, a: SplitArgs) -> Result<()> {
    let corpus = load_corpus(&pick(a.corpus, ctx.cfg.corpus.clone(), "corpus")?)?;
    let out = ctx.out()?;
    let spec = corpus::split(&corpus, ctx.seed())?;
    spec.save(&out.join("split.json"))?;
    let (tr, va, te) = spec.sizes();
    println!("train {tr}, val {va}, test {te} -> {}", out.join("split.json").display());
    Ok(())
}

// ---- train ---------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Split file; computed from the seed and saved when absent
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Disable reciprocal class weights
    #[arg(long)]
    no_class_weights: bool,
    /// Run a hyperparameter search with this many trials first
    #[arg(long)]
    tune: Option<usize>,
}

#[derive(Serialize)]
struct TrainSummary {
    encoder: String,
    epochs_run: usize,
    best_epoch: usize,
    stopped_early: bool,
    val_loss: f64,
    val_macro_f1: f64,
    checkpoint: PathBuf,
}

fn model_config(ctx: &Ctx, a: &TrainArgs) -> Result<ModelConfig> {
    let mut c = ctx.cfg.model.clone();
    c.seed = ctx.seed();
    if let Some(v) = &a.encoder {
        c.encoder_id = v.clone();
    }
    c.epochs = a.epochs.unwrap_or(c.epochs);
    c.batch_size = a.batch_size.unwrap_or(c.batch_size);
    c.learning_rate = a.learning_rate.unwrap_or(c.learning_rate);
    c.patience = a.patience.unwrap_or(c.patience);
    c.max_tokens = a.max_tokens.unwrap_or(c.max_tokens);
    c.weight_decay = a.weight_decay.unwrap_or(c.weight_decay);
    if a.no_class_weights {
        c.use_class_weights = false;
    }
    c.validate()?;
    trainer::encoder_spec(&c.encoder_id)?;
    Ok(c)
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let corpus_path = pick(a.corpus.clone(), ctx.cfg.corpus.clone(), "corpus")?;
    require_file(&corpus_path, "corpus")?;
    if let Some(p) = a.split.as_ref().or(ctx.cfg.split.as_ref()) {
        require_file(p, "split file")?;
    }
    let mut config = model_config(ctx, &a)?;
    let corpus = Corpus::load(&corpus_path)?;
    let out = ctx.out()?;
    let split = match a.split.clone().or_else(|| ctx.cfg.split.clone()) {
        Some(p) => SplitSpec::load(&p)?,
        None => {
            let s = corpus::split(&corpus, config.seed)?;
            s.save(&out.join("split.json"))?;
            s
        }
    };
    split.validate_against(&corpus)?;

    if let Some(budget) = a.tune {
        let result = tune::tune(&config, &tune::SearchSpace::default(), budget, config.seed, |c| {
            let (_, h) = trainer::train::<f64>(c, &corpus, &split)?;
            Ok(h.best().map_or(0.0, |r| r.val_macro_f1))
        })?;
        result.save_log(&out.join("tune_log.jsonl"))?;
        println!(
            "tuning: best lr {:.2e}, batch {} (val macro F1 {:.4})",
            result.best.learning_rate, result.best.batch_size, result.best_score
        );
        config = result.best;
    }

    let (ck, history) = trainer::train_with_progress::<f64>(&config, &corpus, &split, |r| {
        eprintln!(
            "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_macro_f1 {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_macro_f1
        );
    })?;
    let ck_dir = out.join("checkpoint");
    ck.save(&ck_dir)?;
    let jsonl = history.to_jsonl();
    write_file(&ck_dir.join("history.jsonl"), &jsonl)?;
    write_file(&out.join("history.jsonl"), &jsonl)?;
    let best = history.best().context("training produced no epochs")?;
    let summary = TrainSummary {
        encoder: config.encoder_id.clone(),
        epochs_run: history.epochs.len(),
        best_epoch: history.best_epoch,
        stopped_early: history.stopped_early,
        val_loss: best.val_loss,
        val_macro_f1: best.val_macro_f1,
        checkpoint: ck_dir.clone(),
    };
    write_json(&out.join("train_summary.json"), &summary)?;
    println!(
        "best epoch {} of {} (val macro F1 {:.4}) -> {}",
        summary.best_epoch,
        summary.epochs_run,
        summary.val_macro_f1,
        ck_dir.display()
    );
    Ok(())
}

// ---- predict -------------------------------------------------------------

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    threshold: Option<f64>,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_dir(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?)
}

fn write_predictions(path: &Path, m: &ProbabilityMatrix, decisions: &[DecisionLabel]) -> Result<()> {
    let mut w = create(path)?;
    m.write_jsonl(Some(decisions), &mut w)?;
    w.flush()?;
    Ok(())
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let ck_path = pick(a.checkpoint, ctx.cfg.checkpoint.clone(), "checkpoint")?;
    require_dir(&ck_path, "checkpoint")?;
    let inputs = load_inputs(ctx, &a.input)?;
    let ck = load_checkpoint(&ck_path)?;
    let out = ctx.out()?;
    let threshold = ctx.threshold(a.threshold);
    let m = trainer::predict(&ck, &inputs.refs()).with_ids(inputs.ids.clone())?;
    let decisions = m.decisions(threshold)?;
    let path = out.join("predictions.jsonl");
    write_predictions(&path, &m, &decisions)?;
    println!("{} predictions -> {}", m.len(), path.display());
    Ok(())
}

// ---- ensemble ------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EnsembleArgs {
    /// Ensemble spec (TOML)
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
    /// Fit the stacker on validation-split predictions before scoring
    #[arg(long)]
    fit_stacker: bool,
    /// Trained stacker weights (overrides the spec)
    #[arg(long)]
    stacker: Option<PathBuf>,
}

fn run_ensemble(ctx: &Ctx, a: EnsembleArgs) -> Result<()> {
    let spec_path = pick(a.spec, ctx.cfg.ensemble.clone(), "spec")?;
    require_file(&spec_path, "ensemble spec")?;
    let spec = EnsembleSpec::load(&spec_path)?;
    let members = spec.load_members::<f64>()?;
    let inputs = load_inputs(ctx, &a.input)?;
    let out = ctx.out()?;

    let stacker: Option<StackerModel> = if spec.combiner != Combiner::Stacker {
        None
    } else if a.fit_stacker {
        let split_path = pick(a.input.split.clone(), ctx.cfg.split.clone(), "split")?;
        let split = load_split(&split_path)?;
        let corpus_path = pick(a.input.input.clone(), ctx.cfg.corpus.clone(), "input")?;
        let corpus = load_corpus(&corpus_path)?;
        let val = corpus.subset(&split.val)?;
        let mut texts: Vec<String> = val.iter().map(|s| s.text.clone()).collect();
        if a.input.normalize {
            let pre = ctx.preprocess()?;
            texts = texts.iter().map(|t| pre.normalize(t)).collect();
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let ids: Vec<String> = val.iter().map(|s| s.id.clone()).collect();
        let matrices = members
            .iter()
            .map(|m| trainer::predict(m, &refs).with_ids(ids.clone()))
            .collect::<ctlab_core::Result<Vec<_>>>()?;
        let labels: Vec<_> = val.iter().map(|s| s.labels).collect();
        let s = ensemble::train_stacker(&matrices, &labels, Some(&split), &spec.stacker)?;
        s.save(&out.join("stacker.json"))?;
        Some(s)
    } else {
        let path = a
            .stacker
            .clone()
            .or_else(|| spec.stacker.path.clone())
            .ok_or_else(|| Invalid("stacker combiner needs --stacker, stacker.path in the spec, or --fit-stacker".into()))?;
        require_file(&path, "stacker weights")?;
        Some(StackerModel::load(&path)?)
    };

    let (matrices, output) = ensemble::run_ensemble(&spec, &members, inputs.ids.clone(), &inputs.refs(), stacker.as_ref())?;
    let member_dir = out.join("members");
    std::fs::create_dir_all(&member_dir)?;
    for (k, m) in matrices.iter().enumerate() {
        let mut w = create(&member_dir.join(format!("member-{k}.jsonl")))?;
        m.write_jsonl(None, &mut w)?;
        w.flush()?;
    }
    // vote output is already binary; it is written as 0/1 scores
    let scores = match &output.scores {
        EnsembleScores::Probabilities(m) => m.clone(),
        EnsembleScores::Votes(v) => ProbabilityMatrix::new(
            output.ids.clone(),
            v.iter().map(|r| r.map(|b| if b { 1.0 } else { 0.0 })).collect(),
        )?,
    };
    let path = out.join("predictions.jsonl");
    write_predictions(&path, &scores, &output.decisions)?;
    println!(
        "{} rows combined with {:?} over {} members -> {}",
        scores.len(),
        spec.combiner,
        matrices.len(),
        path.display()
    );
    Ok(())
}

// ---- eval ----------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Predictions JSONL `{id, probs, decision?}`
    #[arg(long)]
    pred: PathBuf,
    /// Gold corpus
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the confusion matrix as an SVG heatmap
    #[arg(long)]
    heatmap: bool,
    /// Write a seeded random sample of this many misclassified rows
    #[arg(long)]
    review: Option<usize>,
    /// Title for the rendered table
    #[arg(long, default_value = "Evaluation")]
    title: String,
}

#[derive(Deserialize)]
struct PredRow {
    id: String,
    probs: [f64; NUM_CLASSES],
    #[serde(default)]
    decision: Option<DecisionLabel>,
}

fn read_pred_rows(path: &Path) -> Result<Vec<PredRow>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: PredRow = serde_json::from_str(&line)
            .map_err(|e| Invalid(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

fn eval(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    require_file(&a.pred, "predictions")?;
    let gold_path = pick(a.gold, ctx.cfg.corpus.clone(), "gold")?;
    let gold = load_corpus(&gold_path)?;
    let rows = read_pred_rows(&a.pred)?;
    let out = ctx.out()?;
    let threshold = ctx.threshold(a.threshold);

    let mut samples = Vec::with_capacity(rows.len());
    for r in &rows {
        let s = gold
            .get(&r.id)
            .ok_or_else(|| Invalid(format!("prediction id `{}` is not in the gold corpus", r.id)))?;
        samples.push(s.clone());
    }
    let m = ProbabilityMatrix::new(rows.iter().map(|r| r.id.clone()).collect(), rows.iter().map(|r| r.probs).collect())?;
    let decisions: Vec<DecisionLabel> = rows
        .iter()
        .map(|r| match r.decision {
            Some(d) => Ok(d),
            None => trainer::decide(&r.probs, threshold),
        })
        .collect::<ctlab_core::Result<_>>()?;
    let gold_labels: Vec<_> = samples.iter().map(|s| s.labels).collect();
    let report: ctlab_core::MetricsReport = metrics::evaluate(&m.binarize(threshold), &decisions, &gold_labels)?;

    let table = report.render_table(&a.title);
    print!("{table}");
    write_file(&out.join("metrics_table.txt"), &table)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_file(&out.join("confusion.csv"), report.confusion.to_csv())?;
    if a.heatmap {
        write_file(&out.join("confusion.svg"), report.confusion.to_svg(&a.title))?;
    }
    let mis = metrics::misclassification_report(&samples, &decisions, m.rows())?;
    let mut w = create(&out.join("misclassified.jsonl"))?;
    for r in &mis {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    if let Some(k) = a.review {
        let picked = metrics::sample_for_review(&mis, k, ctx.seed());
        let mut w = create(&out.join("review_sample.jsonl"))?;
        for r in &picked {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        w.flush()?;
    }
    Ok(())
}

// ---- explain -------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Text to explain
    #[arg(long, conflicts_with = "id")]
    text: Option<String>,
    /// Id of a row in --input to explain
    #[arg(long, requires = "input")]
    id: Option<String>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Target class; defaults to the model's strongest class
    #[arg(long)]
    class: Option<String>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 10)]
    features: usize,
    #[arg(long)]
    normalize: bool,
}

fn explain(ctx: &Ctx, a: ExplainArgs) -> Result<()> {
    let ck_path = pick(a.checkpoint, ctx.cfg.checkpoint.clone(), "checkpoint")?;
    require_dir(&ck_path, "checkpoint")?;
    let text = match (&a.text, &a.id) {
        (Some(t), _) => t.clone(),
        (None, Some(id)) => {
            let inputs = Inputs::load(a.input.as_deref().expect("clap requires --input"))?;
            let i = inputs
                .ids
                .iter()
                .position(|x| x == id)
                .ok_or_else(|| Invalid(format!("no row `{id}` in the input")))?;
            inputs.texts[i].clone()
        }
        (None, None) => bail!(Invalid("give --text or --id with --input".into())),
    };
    let text = if a.normalize { ctx.preprocess()?.normalize(&text) } else { text };
    if text.trim().is_empty() {
        bail!(Invalid("text is empty".into()));
    }
    let ck = load_checkpoint(&ck_path)?;
    let class = match &a.class {
        Some(c) => c.parse::<ViolenceClass>()?,
        None => {
            let p = ck.probs(&text);
            let best = (0..NUM_CLASSES).fold(0, |b, i| if p[i] > p[b] { i } else { b });
            ViolenceClass::ALL[best]
        }
    };
    let opts = ExplainOptions {
        n_samples: a.samples,
        n_features: a.features,
        seed: ctx.seed(),
    };
    let exp = diagnostics::explain(&text, &ck, class, opts)?;
    let out = ctx.out()?;
    write_json(&out.join("explanation.json"), &exp)?;
    write_file(&out.join("explanation.html"), exp.to_html())?;
    println!("{} (score {:.4}, fit {:.3})", class, exp.score, exp.surrogate_fit);
    for f in &exp.features {
        println!("  {:>+8.4}  {}", f.weight, f.token);
    }
    Ok(())
}

// ---- diagnose ------------------------------------------------------------

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    /// Corpus for per-class frequent words
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    top_k: usize,
    /// CSV of word pairs `word_a,word_b`
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Encoder for the similarity table as NAME=CHECKPOINT_DIR; repeatable
    #[arg(long = "encoder")]
    encoders: Vec<String>,
    /// Misclassification report from `eval`
    #[arg(long)]
    misclassified: Option<PathBuf>,
    /// Trigger word list; defaults to the shipped list
    #[arg(long)]
    triggers: Option<PathBuf>,
    /// Only count misclassified rows with this gold label
    #[arg(long)]
    gold: Option<String>,
    /// Only count misclassified rows with this predicted label
    #[arg(long)]
    predicted: Option<String>,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line == "word_a,word_b") {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| Invalid(format!("{} line {}: expected `word_a,word_b`", path.display(), i + 1)))?;
        pairs.push((a.trim().to_owned(), b.trim().to_owned()));
    }
    Ok(pairs)
}

#[derive(Deserialize)]
struct MisRow {
    text: String,
    gold: DecisionLabel,
    pred: DecisionLabel,
}

#[derive(Serialize)]
struct Coverage {
    samples: usize,
    triggers: usize,
    coverage: f64,
}

fn decision_arg(s: &Option<String>) -> Result<Option<DecisionLabel>> {
    Ok(match s {
        Some(s) => Some(s.parse::<DecisionLabel>()?),
        None => None,
    })
}

fn diagnose(ctx: &Ctx, a: DiagnoseArgs) -> Result<()> {
    let corpus_path = a.corpus.clone().or_else(|| ctx.cfg.corpus.clone());
    if corpus_path.is_none() && a.pairs.is_none() && a.misclassified.is_none() {
        bail!(Invalid("nothing to do: give --corpus, --pairs with --encoder, or --misclassified".into()));
    }
    if let Some(p) = &a.pairs {
        require_file(p, "word-pair file")?;
        if a.encoders.is_empty() {
            bail!(Invalid("--pairs needs at least one --encoder NAME=DIR".into()));
        }
    }
    let encoders = a
        .encoders
        .iter()
        .map(|e| {
            let (name, dir) = e
                .split_once('=')
                .ok_or_else(|| Invalid(format!("--encoder `{e}` is not NAME=DIR")))?;
            require_dir(Path::new(dir), "checkpoint")?;
            Ok((name.to_owned(), PathBuf::from(dir)))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = ctx.out()?;

    if let Some(p) = &corpus_path {
        let corpus = load_corpus(p)?;
        let mut words = serde_json::Map::new();
        for c in ViolenceClass::ALL {
            match diagnostics::frequent_words(&corpus, c, a.top_k) {
                Ok(list) => {
                    words.insert(c.column().into(), serde_json::to_value(list)?);
                }
                Err(e) => eprintln!("warning: {c}: {e}"),
            }
        }
        write_json(&out.join("frequent_words.json"), &words)?;
        println!("frequent words -> {}", out.join("frequent_words.json").display());
    }

    if let Some(p) = &a.pairs {
        let pairs = read_pairs(p)?;
        let loaded = encoders
            .iter()
            .map(|(n, d)| Ok((n.clone(), Checkpoint::load(d)?)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<(String, &Checkpoint)> = loaded.iter().map(|(n, c)| (n.clone(), c)).collect();
        let table = diagnostics::similarity_table(&pairs, &refs)?;
        write_file(&out.join("similarity.csv"), table.to_csv())?;
        print!("{}", table.to_csv());
    }

    if let Some(p) = &a.misclassified {
        require_file(p, "misclassification report")?;
        let trig_path = a
            .triggers
            .clone()
            .unwrap_or_else(|| preprocess::default_data_dir().join("trigger-words.txt"));
        require_file(&trig_path, "trigger word list")?;
        let triggers = diagnostics::load_word_list(&trig_path)?;
        let (gold, pred) = (decision_arg(&a.gold)?, decision_arg(&a.predicted)?);
        let f = File::open(p)?;
        let mut texts = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: MisRow =
                serde_json::from_str(&line).map_err(|e| Invalid(format!("{} line {}: {e}", p.display(), i + 1)))?;
            if gold.is_none_or(|g| g == row.gold) && pred.is_none_or(|d| d == row.pred) {
                texts.push(row.text);
            }
        }
        let coverage = diagnostics::trigger_coverage(&texts, &triggers)?;
        let c = Coverage {
            samples: texts.len(),
            triggers: triggers.len(),
            coverage,
        };
        write_json(&out.join("coverage.json"), &c)?;
        println!("trigger coverage {:.4} over {} samples", c.coverage, c.samples);
    }
    Ok(())
}

// ---- mine ----------------------------------------------------------------

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// External texts (.jsonl with `text`, or one per line)
    #[arg(long)]
    external: PathBuf,
    #[arg(long)]
    threshold: Option<f64>,
    /// Source name recorded on each candidate; defaults to the file stem
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    normalize: bool,
}

fn mine(ctx: &Ctx, a: MineArgs) -> Result<()> {
    let ck_path = pick(a.checkpoint, ctx.cfg.checkpoint.clone(), "checkpoint")?;
    require_dir(&ck_path, "checkpoint")?;
    require_file(&a.external, "external corpus")?;
    let ck = load_checkpoint(&ck_path)?;
    let raw = augment::read_external(&a.external)?;
    let scored: Vec<ExternalText> = if a.normalize {
        let pre = ctx.preprocess()?;
        raw.iter()
            .map(|t| ExternalText {
                id: t.id.clone(),
                text: pre.normalize(&t.text),
            })
            .collect()
    } else {
        raw.clone()
    };
    let source = a.source.unwrap_or_else(|| {
        a.external
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "external".into())
    });
    let threshold = ctx.threshold(a.threshold);
    let mut candidates: Vec<CandidateComment<f64>> = augment::mine_candidates(&scored, &ck, threshold, &source)?;
    // annotators see the original text, not the normalized one
    let originals: std::collections::HashMap<&str, &str> =
        raw.iter().map(|t| (t.id.as_str(), t.text.as_str())).collect();
    for c in &mut candidates {
        c.text = originals[c.id.as_str()].to_owned();
    }
    let out = ctx.out()?;
    let path = out.join("candidates.jsonl");
    let mut w = create(&path)?;
    for c in &candidates {
        writeln!(w, "{}", serde_json::to_string(c)?)?;
    }
    w.flush()?;
    println!("{} of {} texts selected -> {}", candidates.len(), raw.len(), path.display());
    Ok(())
}

// ---- annotation ----------------------------------------------------------

#[derive(Args, Debug)]
pub struct ServeArgs {
    /// Candidates from `mine` to queue (already queued ids are skipped)
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Event log and snapshot directory
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    annotators: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    adjudicators: Vec<String>,
    #[arg(long)]
    addr: Option<String>,
    #[arg(long)]
    session_cap: Option<usize>,
}

fn read_candidates(path: &Path) -> Result<Vec<CandidateComment<f64>>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Invalid(format!("{} line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn state_dir(ctx: &Ctx, flag: Option<PathBuf>) -> Result<PathBuf> {
    match flag.or_else(|| ctx.cfg.annotation.state_dir.clone()) {
        Some(d) => Ok(d),
        None => Ok(ctx.out()?.join("annotation")),
    }
}

fn serve(ctx: &Ctx, a: ServeArgs) -> Result<()> {
    let ann = &ctx.cfg.annotation;
    let pick_list = |flag: Vec<String>, cfg: &Vec<String>| if flag.is_empty() { cfg.clone() } else { flag };
    let config = ServiceConfig {
        annotators: pick_list(a.annotators, &ann.annotators),
        adjudicators: pick_list(a.adjudicators, &ann.adjudicators),
        session_cap: a.session_cap.or(ann.session_cap).unwrap_or(50),
        ..ServiceConfig::default()
    };
    config.validate()?;
    let addr_text = a.addr.or_else(|| ann.addr.clone()).unwrap_or_else(|| "127.0.0.1:8080".into());
    let addr: SocketAddr = addr_text
        .parse()
        .map_err(|e| Invalid(format!("invalid --addr `{addr_text}`: {e}")))?;
    let candidates = match &a.candidates {
        Some(p) => {
            require_file(p, "candidates file")?;
            read_candidates(p)?
        }
        None => Vec::new(),
    };
    let dir = state_dir(ctx, a.state_dir)?;
    let mut store = Store::open(&dir, config, ctlab_annotate::system_clock())?;
    let fresh: Vec<_> = candidates
        .into_iter()
        .filter(|c| store.state().task(&c.id).is_none())
        .collect();
    let added = store.add_candidates(fresh)?;
    eprintln!(
        "{} tasks ({} new), state in {}, listening on http://{addr}",
        store.state().tasks.len(),
        added,
        dir.display()
    );
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ctlab_annotate::serve(addr, ctlab_annotate::shared(store)))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    state_dir: Option<PathBuf>,
}

fn export(ctx: &Ctx, a: ExportArgs) -> Result<()> {
    let dir = state_dir(ctx, a.state_dir)?;
    require_file(&dir.join(ctlab_annotate::store::EVENTS_FILE), "annotation event log")?;
    let state = ctlab_annotate::load_state(&dir)?;
    let batch = AugmentationBatch::new(state.accepted_samples())?;
    let out = ctx.out()?;
    let path = out.join("annotations.jsonl");
    batch.save(&path)?;
    let c = batch.counts();
    println!(
        "{} accepted samples (religio {}, ethno {}, nondenominational {}, noncommunal {}) -> {}",
        batch.len(),
        c[0],
        c[1],
        c[2],
        c[3],
        path.display()
    );
    Ok(())
}
