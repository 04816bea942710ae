//! The `medspan` command-line tool.
//!
//! Exit status is 0 on success, 1 when inputs fail validation or a stage
//! fails, and 2 on usage errors.

mod config;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{Paths, PipelineConfig};

use crate::augment::{categories_from_lexicon, self_train_filter, substitute_drugs, top_mentions};
use crate::bio;
use crate::corpus::{load_jsonl, load_lexicon, save_jsonl, AnnotatedTweet, Dataset};
use crate::ensemble::{load_prediction_sets, save_prediction_sets, tune_k, vote, EnsembleConfig, PredictionSet};
use crate::metrics::{EvalReport, Predictions};
use crate::model::{load_checkpoint, save_checkpoint, train, TagLossReduction};
use crate::preprocess::normalize_annotated;
use crate::synth::{generate, write_bundle};
use crate::weaklabel::{load_binary_tsv, weak_label, MatchMode};

#[derive(Debug, Parser)]
#[command(name = "medspan", version, about = "Medication mention extraction from tweets")]
pub struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the bundled synthetic corpora.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize a dataset, project its spans and check BIO alignment.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Recover span offsets for binary-labeled tweets.
    WeakLabel(WeakLabelArgs),
    /// Most frequent mentions in span-labeled datasets.
    Mentions {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 200)]
        top: usize,
    },
    /// Self-training selection followed by drug substitution.
    Augment(AugmentArgs),
    /// Train a tagger on the concatenation of one or more datasets.
    Train(TrainArgs),
    /// Tag a dataset with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Model name recorded in the prediction set; defaults to the
        /// checkpoint file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Agreement voting over prediction sets.
    Ensemble(EnsembleArgs),
    /// Strict and overlap scores for each model in the prediction files.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long = "predictions", required = true)]
        predictions: Vec<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Train multi-task and single-task models on the same data and report
    /// both side by side.
    Ablate {
        #[command(flatten)]
        train: TrainArgs,
        /// Dataset to score both models on.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Partial,
}

#[derive(Debug, Args)]
pub struct WeakLabelArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub max_token_gap: Option<usize>,
    #[arg(long)]
    pub min_overlap: Option<f64>,
    #[arg(long)]
    pub edit_distance: Option<usize>,
    /// Keep positives whose names were not found, as binary-only examples.
    #[arg(long)]
    pub keep_unmatched: bool,
    /// Drop negative tweets from the output.
    #[arg(long)]
    pub positive_only: bool,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Unlabeled pool tweets.
    #[arg(long)]
    pub pool: PathBuf,
    /// Prediction set over the pool (one model).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Drugs to substitute in, with use categories.
    #[arg(long)]
    pub lexicon: PathBuf,
    /// Categories of the drugs mentioned in the pool; defaults to the
    /// lexicon.
    #[arg(long)]
    pub source_categories: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Also write the self-training selection.
    #[arg(long)]
    pub selected: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_chars: Option<usize>,
    /// Accept tweets with several predicted mentions.
    #[arg(long)]
    pub allow_multiple: bool,
    #[arg(long)]
    pub per_drug: Option<usize>,
    #[arg(long)]
    pub no_dedup: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReductionArg {
    Mean,
    Sum,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training datasets, concatenated in order.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    /// Checkpoint selection set; the training data is used when absent.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Checkpoint path (train) or unused (ablate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the training report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Train on the tag loss only.
    #[arg(long)]
    pub single_task: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub stop_at_f1: Option<f64>,
    #[arg(long, value_enum)]
    pub tag_loss: Option<ReductionArg>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Case-sensitive vocabulary.
    #[arg(long)]
    pub cased: bool,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Prediction-set files; each may hold several models.
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<PathBuf>,
    /// Agreement threshold. Tuned on `--gold` when omitted.
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Keep overlapping spans that both reach the threshold.
    #[arg(long)]
    pub keep_overlaps: bool,
    #[arg(long, default_value = "ensemble")]
    pub name: String,
}

/// Parses arguments, runs the command and maps the outcome to an exit code.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    match cli.command {
        Command::Synth { out } => cmd_synth(&cfg, &out),
        Command::Preprocess { input, output } => cmd_preprocess(&input, &output),
        Command::WeakLabel(args) => cmd_weak_label(&cfg, &args),
        Command::Mentions { inputs, top } => cmd_mentions(&inputs, top),
        Command::Augment(args) => cmd_augment(&cfg, &args),
        Command::Train(args) => cmd_train(&cfg, &args),
        Command::Predict {
            checkpoint,
            input,
            output,
            name,
        } => cmd_predict(&checkpoint, &input, &output, name),
        Command::Ensemble(args) => cmd_ensemble(&cfg, &args),
        Command::Evaluate { gold, predictions, json } => cmd_evaluate(&gold, &predictions, json),
        Command::Ablate { train, test, json } => cmd_ablate(&cfg, &train, &test, json),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}")?;
            Ok(())
        }
    }
}

fn cmd_synth(cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    let bundle = generate(&cfg.synth)?;
    write_bundle(&bundle, out)?;
    log::info!("wrote synthetic corpora to {}", out.display());
    Ok(())
}

fn cmd_preprocess(input: &Path, output: &Path) -> anyhow::Result<()> {
    let ds = load_jsonl(input)?;
    let mut tweets = Vec::with_capacity(ds.len());
    let mut n_warnings = 0;
    for t in &ds.tweets {
        let (normalized, nt, warnings) = normalize_annotated(t);
        n_warnings += warnings.len();
        bio::encode(&nt.tokens, &normalized.spans).with_context(|| format!("tweet {}", t.id()))?;
        tweets.push(normalized);
    }
    save_jsonl(&Dataset::new(ds.name, tweets)?, output)?;
    log::info!("preprocessed {} tweets, {n_warnings} projection warnings", ds.tweets.len());
    Ok(())
}

fn cmd_weak_label(cfg: &PipelineConfig, args: &WeakLabelArgs) -> anyhow::Result<()> {
    let mut policy = cfg.weak_label.clone();
    if let Some(m) = args.mode {
        policy.mode = match m {
            ModeArg::Exact => MatchMode::Exact,
            ModeArg::Partial => MatchMode::Partial,
        };
    }
    if let Some(g) = args.max_token_gap {
        policy.max_token_gap = g;
    }
    if let Some(f) = args.min_overlap {
        policy.min_token_overlap_fraction = f;
    }
    if let Some(d) = args.edit_distance {
        policy.edit_distance_per_token = d;
    }
    let rows = load_binary_tsv(&args.input)?;
    let name = args.output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (mut ds, report) = weak_label(&name, &rows, &policy, args.keep_unmatched)?;
    if args.positive_only {
        ds.tweets.retain(AnnotatedTweet::is_positive);
    }
    save_jsonl(&ds, &args.output)?;
    log::info!(
        "weak labels: {} exact, {} partial, {} unmatched, {} negative",
        report.n_matched_exact,
        report.n_matched_partial,
        report.n_unmatched,
        report.n_negative
    );
    write_json(&report, args.report.as_deref())
}

fn cmd_mentions(inputs: &[PathBuf], top: usize) -> anyhow::Result<()> {
    let parts = inputs.iter().map(load_jsonl).collect::<Result<Vec<_>, _>>()?;
    let all = Dataset::concat(&parts)?;
    let mut out = std::io::stdout().lock();
    for (name, count) in top_mentions(&all, top) {
        writeln!(out, "{name}\t{count}")?;
    }
    Ok(())
}

fn single_set(path: &Path) -> anyhow::Result<PredictionSet> {
    let mut sets = load_prediction_sets(path)?;
    match sets.len() {
        0 => Ok(PredictionSet::default()),
        1 => Ok(sets.remove(0)),
        n => bail!("{} holds {n} models; expected one", path.display()),
    }
}

fn cmd_augment(cfg: &PipelineConfig, args: &AugmentArgs) -> anyhow::Result<()> {
    let pool = load_jsonl(&args.pool)?;
    let preds = single_set(&args.predictions)?;
    for id in preds.predictions.keys() {
        if pool.get(id).is_none() {
            bail!("prediction for tweet {id} which is not in the pool");
        }
    }
    let predicted: Vec<AnnotatedTweet> = pool
        .tweets
        .iter()
        .map(|t| AnnotatedTweet::new(t.tweet.clone(), preds.predictions.get(t.id()).cloned().unwrap_or_default()))
        .collect();

    let mut filter = cfg.self_train.clone();
    if let Some(t) = args.threshold {
        filter.score_threshold = t;
    }
    if let Some(m) = args.max_chars {
        filter.max_chars = m;
    }
    if args.allow_multiple {
        filter.require_single_mention = false;
    }
    let selected: Vec<AnnotatedTweet> = self_train_filter(&predicted, &filter)?
        .into_iter()
        .filter(AnnotatedTweet::is_positive)
        .collect();
    log::info!("self-training kept {} of {} pool tweets", selected.len(), pool.len());
    if let Some(p) = &args.selected {
        save_jsonl(&Dataset::new("selected", selected.clone())?, p)?;
    }

    let lexicon = load_lexicon(&args.lexicon)?;
    let categories = match &args.source_categories {
        Some(p) => categories_from_lexicon(&load_lexicon(p)?),
        None => categories_from_lexicon(&lexicon),
    };
    let mut sub = cfg.substitution.clone();
    if let Some(n) = args.per_drug {
        sub.per_drug = n;
    }
    if args.no_dedup {
        sub.dedup = false;
    }
    let (extra, report) = substitute_drugs(&selected, &lexicon, &categories, &sub)?;
    let name = args.output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    save_jsonl(&Dataset::new(name, extra)?, &args.output)?;
    log::info!("substitution produced {} tweets ({} duplicates removed)", report.n_output, report.n_duplicates);
    write_json(&report, args.report.as_deref())
}

fn configs(cfg: &PipelineConfig, a: &TrainArgs) -> (crate::model::ModelConfig, crate::model::TrainConfig) {
    let mut m = cfg.model.clone();
    let mut t = cfg.train.clone();
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(m.d_model, a.d_model);
    set!(m.n_layers, a.layers);
    set!(m.n_heads, a.heads);
    set!(m.d_ff, a.d_ff);
    set!(m.max_seq_len, a.max_seq_len);
    set!(m.dropout, a.dropout);
    set!(t.epochs, a.epochs);
    set!(t.lr, a.lr);
    set!(t.batch_size, a.batch_size);
    set!(t.min_freq, a.min_freq);
    if a.cased {
        m.case_sensitive = true;
    }
    if a.stop_at_f1.is_some() {
        t.stop_at_f1 = a.stop_at_f1;
    }
    if let Some(r) = a.tag_loss {
        t.tag_loss = match r {
            ReductionArg::Mean => TagLossReduction::Mean,
            ReductionArg::Sum => TagLossReduction::Sum,
        };
    }
    if a.single_task {
        t.multi_task = false;
    }
    (m, t)
}

fn load_training_data(a: &TrainArgs) -> anyhow::Result<(Dataset, Option<Dataset>)> {
    let parts = a.data.iter().map(load_jsonl).collect::<Result<Vec<_>, _>>()?;
    let train = Dataset::concat(&parts)?;
    if train.is_empty() {
        bail!("training data is empty");
    }
    let dev = a.dev.as_ref().map(load_jsonl).transpose()?;
    Ok((train, dev))
}

fn cmd_train(cfg: &PipelineConfig, a: &TrainArgs) -> anyhow::Result<()> {
    let Some(out) = &a.out else {
        bail!("--out is required for train");
    };
    let (mcfg, tcfg) = configs(cfg, a);
    let (train_ds, dev) = load_training_data(a)?;
    let (model, report) = train(&train_ds, dev.as_ref(), &mcfg, &tcfg)?;
    save_checkpoint(&model, out)?;
    log::info!(
        "{}: best {} strict F1 {:.4} at epoch {}; checkpoint {}",
        report.train_name,
        report.selected_on,
        report.best_f1,
        report.best_epoch,
        out.display()
    );
    if let Some(p) = &a.report {
        write_json(&report, Some(p))?;
    }
    Ok(())
}

fn cmd_predict(checkpoint: &Path, input: &Path, output: &Path, name: Option<String>) -> anyhow::Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let ds = load_jsonl(input)?;
    let name = name.unwrap_or_else(|| checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    let set = PredictionSet::new(name, model.predict_dataset(&ds));
    save_prediction_sets(&[set], output)?;
    Ok(())
}

fn load_all_sets(paths: &[PathBuf]) -> anyhow::Result<Vec<PredictionSet>> {
    let mut sets = Vec::new();
    for p in paths {
        sets.extend(load_prediction_sets(p)?);
    }
    Ok(sets)
}

fn cmd_ensemble(cfg: &PipelineConfig, a: &EnsembleArgs) -> anyhow::Result<()> {
    let sets = load_all_sets(&a.predictions)?;
    if sets.is_empty() {
        bail!("no predictions to ensemble");
    }
    let mut ecfg: EnsembleConfig = cfg.ensemble.clone();
    if a.keep_overlaps {
        ecfg.resolve_overlaps = false;
    }
    let k = match (a.k, &a.gold) {
        (Some(k), _) => k,
        (None, Some(gold)) => {
            let gold = load_jsonl(gold)?;
            let tuned = tune_k(&sets, &gold)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "k\tP\tR\tF1")?;
            for (k, m) in &tuned.sweep {
                writeln!(out, "{k}\t{:.4}\t{:.4}\t{:.4}", m.precision, m.recall, m.f1)?;
            }
            writeln!(out, "best k = {} (strict F1 {:.4})", tuned.best_k, tuned.best.f1)?;
            tuned.best_k
        }
        (None, None) => bail!("either -k or --gold is required"),
    };
    ecfg.k = k;
    let voted: Predictions = vote(&sets, &ecfg)?;
    if let Some(out) = &a.output {
        save_prediction_sets(&[PredictionSet::new(a.name.clone(), voted)], out)?;
    }
    log::info!("ensembled {} models with k = {k}", sets.len());
    Ok(())
}

fn cmd_evaluate(gold: &Path, predictions: &[PathBuf], json: bool) -> anyhow::Result<()> {
    let gold = load_jsonl(gold)?;
    let mut report = EvalReport::default();
    for set in load_all_sets(predictions)? {
        report.add(set.model_name, &gold, &set.predictions)?;
    }
    if json {
        write_json(&report, None)
    } else {
        print!("{}", report.to_table());
        Ok(())
    }
}

fn cmd_ablate(cfg: &PipelineConfig, a: &TrainArgs, test: &Path, json: bool) -> anyhow::Result<()> {
    let (mcfg, mut tcfg) = configs(cfg, a);
    let (train_ds, dev) = load_training_data(a)?;
    let test = load_jsonl(test)?;
    let mut report = EvalReport::default();
    let mut losses = BTreeMap::new();
    for (label, multi) in [("multi-task", true), ("single-task", false)] {
        tcfg.multi_task = multi;
        let (model, tr) = train(&train_ds, dev.as_ref(), &mcfg, &tcfg)?;
        report.add(label, &test, &model.predict_dataset(&test))?;
        losses.insert(label, tr.epochs.last().map(|e| e.tag_loss));
    }
    if json {
        write_json(&report, None)
    } else {
        print!("{}", report.to_table());
        for (label, loss) in losses {
            if let Some(l) = loss {
                println!("{label}: final tag loss {l:.4}");
            }
        }
        Ok(())
    }
}
