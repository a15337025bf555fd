//! Experiment configs, ablation runs and the command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Coverage, GradCheckReport};
use crate::dataset::synthetic::VOCAB_FILE;
use crate::dataset::{generate_synthetic, write_dataset, Corpus, SyntheticConfig, Vocabulary};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_impressions, render_table, MetricReport, ModelScorer, RunMetrics};
use crate::model::{prepare_news, MmRec, ModelConfig, Variant};
use crate::training::{
    batch_loss, build_samples, load_checkpoint, save_checkpoint, train, TrainConfig, TrainData, TrainingSample,
};
use crate::user::ScorerOptions;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Everything one experiment needs, as a single flat JSON object. Missing
/// keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: Variant,

    pub d: usize,
    pub d_a: usize,
    pub heads: usize,
    pub n_text_layers: usize,
    pub n_co_layers: usize,
    pub m_max: usize,
    pub k_max: usize,
    pub p_max: usize,
    pub ffn_mult: usize,
    pub freeze_below: usize,
    pub residual_init: f64,
    pub embed_init: f64,
    /// Divide the crossmodal attention logits by `√d`.
    pub scaled_user_attention: bool,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub neg_ratio: usize,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
    pub eval_dev: bool,

    /// Training seeds of the repeated runs in `ablate`.
    pub seeds: Vec<u64>,
    /// Split scored by `eval` and `ablate`.
    pub eval_split: String,

    /// Dataset directory; `ablate` generates synthetic data when absent.
    pub data_dir: Option<PathBuf>,
    pub min_count: usize,
    pub synthetic: SyntheticConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let model = ModelConfig::default();
        let train = TrainConfig::desk();
        ExperimentConfig {
            variant: Variant::Full,
            d: enc.d,
            d_a: enc.d_a,
            heads: enc.heads,
            n_text_layers: enc.n_text_layers,
            n_co_layers: enc.n_co_layers,
            m_max: enc.m_max,
            k_max: enc.k_max,
            p_max: model.p_max,
            ffn_mult: enc.ffn_mult,
            freeze_below: enc.freeze_below,
            residual_init: enc.residual_init,
            embed_init: enc.embed_init,
            scaled_user_attention: false,
            lr: train.lr,
            beta1: train.beta1,
            beta2: train.beta2,
            adam_eps: train.adam_eps,
            batch_size: train.batch_size,
            epochs: train.epochs,
            neg_ratio: train.neg_ratio,
            seed: train.seed,
            grad_clip_norm: train.grad_clip_norm,
            eval_dev: train.eval_dev,
            seeds: vec![1, 2, 3, 4, 5],
            eval_split: "test".into(),
            data_dir: None,
            min_count: 1,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Small model whose every scalar can be finite-difference checked in
    /// well under a minute.
    pub fn gradcheck() -> Self {
        ExperimentConfig {
            d: 16,
            d_a: 8,
            heads: 4,
            m_max: 12,
            k_max: 4,
            synthetic: SyntheticConfig {
                num_topics: 4,
                topic_words_per_topic: 4,
                common_words: 12,
                num_news: 60,
                num_users: 12,
                num_impressions: 60,
                d_img: 16,
                max_rois: 4,
                ..SyntheticConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.model_config(2, self.synthetic.d_img).validate()?;
        self.train_config(self.seed).validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if !matches!(self.eval_split.as_str(), "train" | "dev" | "test") {
            return Err(Error::Config(format!("unknown eval_split {:?}", self.eval_split)));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize, d_img: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                vocab_size,
                d: self.d,
                d_img,
                d_a: self.d_a,
                heads: self.heads,
                n_text_layers: self.n_text_layers,
                n_co_layers: self.n_co_layers,
                m_max: self.m_max,
                k_max: self.k_max,
                ffn_mult: self.ffn_mult,
                freeze_below: self.freeze_below,
                residual_init: self.residual_init,
                embed_init: self.embed_init,
            },
            variant: self.variant,
            scorer: ScorerOptions {
                scaled: self.scaled_user_attention,
            },
            p_max: self.p_max,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            neg_ratio: self.neg_ratio,
            seed,
            grad_clip_norm: self.grad_clip_norm,
            eval_dev: self.eval_dev,
        }
    }

    /// Same config with `variant` swapped in; nothing else changes.
    pub fn apply_variant(&self, variant: Variant) -> Self {
        ExperimentConfig {
            variant,
            ..self.clone()
        }
    }

    pub fn write_resolved(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_json(dir.as_ref().join(RESOLVED_CONFIG_FILE), self)
    }

    /// Loads `data_dir`, or generates the synthetic dataset in memory.
    pub fn corpus(&self) -> Result<Corpus> {
        match &self.data_dir {
            Some(dir) => Corpus::load(dir, self.m_max),
            None => Ok(Corpus::from_synthetic(
                generate_synthetic(&self.synthetic)?,
                self.min_count,
            )),
        }
    }
}

fn write_json<S: Serialize>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Result of training one model and scoring one split.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: MmRec<f64>,
    pub metrics: RunMetrics,
    pub dev_auc: Option<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh model with `seed` (initialization and data order) and scores
/// `split`.
pub fn train_and_evaluate(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64, split: &str) -> Result<RunResult> {
    let model_cfg = cfg.model_config(corpus.vocab.size(), corpus.news.roi_dim());
    let padded = prepare_news(&corpus.news, &corpus.vocab, &model_cfg.encoder);
    let mut model = MmRec::<f64>::new(model_cfg, seed)?;
    let data = TrainData {
        news: &corpus.news,
        padded: &padded,
        train: &corpus.train,
        dev: &corpus.dev,
    };
    let report = train(&mut model, data, &cfg.train_config(seed), None)?;
    let impressions = corpus
        .split(split)
        .ok_or_else(|| Error::Config(format!("unknown split {split:?}")))?;
    let metrics = {
        let mut scorer = ModelScorer::new(&model, &corpus.news, &padded)?;
        evaluate_impressions(&mut scorer, impressions)?
    };
    let dev_auc = report
        .best_epoch
        .and_then(|e| report.epochs.iter().find(|l| l.epoch == e))
        .and_then(|l| l.dev.map(|d| d.auc));
    Ok(RunResult {
        model,
        metrics,
        dev_auc,
        epoch_losses: report.epochs.iter().map(|e| e.loss).collect(),
    })
}

/// Worker threads for parallel runs: `MMREC_THREADS` if set, else all cores.
pub fn worker_threads() -> usize {
    std::env::var("MMREC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `jobs` on up to `threads` threads and returns results in job order.
pub fn run_parallel<J, R, F>(jobs: Vec<J>, threads: usize, f: F) -> Vec<R>
where
    J: Send,
    R: Send,
    F: Fn(J) -> R + Sync,
{
    let n = jobs.len();
    let queue = Mutex::new(jobs.into_iter().enumerate().collect::<Vec<_>>());
    let results = Mutex::new((0..n).map(|_| None).collect::<Vec<Option<R>>>());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let job = queue.lock().expect("job queue").pop();
                let Some((i, job)) = job else { break };
                let r = f(job);
                results.lock().expect("results")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("results")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: Variant,
    pub report: MetricReport,
    /// Best-epoch dev AUC of each run.
    pub dev_auc: Vec<f64>,
}

/// Mean metric difference `variant − baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub baseline: Variant,
    pub variant: Variant,
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub split: String,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantReport>,
    pub deltas: Vec<Delta>,
    pub markdown: String,
    pub config: ExperimentConfig,
}

impl AblationReport {
    pub fn get(&self, variant: Variant) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant == variant)
    }
}

/// Deltas of every later variant against the first one.
pub fn deltas(variants: &[VariantReport]) -> Vec<Delta> {
    let Some(base) = variants.first() else {
        return Vec::new();
    };
    variants
        .iter()
        .skip(1)
        .map(|v| Delta {
            baseline: base.variant,
            variant: v.variant,
            auc: v.report.auc.mean - base.report.auc.mean,
            mrr: v.report.mrr.mean - base.report.mrr.mean,
            ndcg5: v.report.ndcg5.mean - base.report.ndcg5.mean,
            ndcg10: v.report.ndcg10.mean - base.report.ndcg10.mean,
        })
        .collect()
}

pub fn ablation_markdown(split: &str, seeds: &[u64], variants: &[VariantReport], deltas: &[Delta]) -> String {
    let mut out = format!(
        "## Ablation ({split} split, {} seeds: {:?})\n\n| Variant | AUC | MRR | NDCG@5 | NDCG@10 |\n|---|---|---|---|---|\n",
        seeds.len(),
        seeds
    );
    for v in variants {
        let cells: Vec<String> = v
            .report
            .columns()
            .iter()
            .map(|c| crate::metrics::format_cell(*c))
            .collect();
        out += &format!("| {} | {} |\n", v.variant, cells.join(" | "));
    }
    if !deltas.is_empty() {
        out += "\n| Delta | AUC | MRR | NDCG@5 | NDCG@10 |\n|---|---|---|---|---|\n";
        for d in deltas {
            out += &format!(
                "| {} − {} | {:+.2} | {:+.2} | {:+.2} | {:+.2} |\n",
                d.variant,
                d.baseline,
                d.auc * 100.0,
                d.mrr * 100.0,
                d.ndcg5 * 100.0,
                d.ndcg10 * 100.0
            );
        }
    }
    out
}

/// Trains and scores every variant for every seed on the same data.
pub fn ablate(cfg: &ExperimentConfig, variants: &[Variant], corpus: &Corpus, threads: usize) -> Result<AblationReport> {
    if variants.len() < 2 {
        return Err(Error::Config("ablate needs at least two variants".into()));
    }
    let jobs: Vec<(usize, Variant, u64)> = variants
        .iter()
        .enumerate()
        .flat_map(|(i, v)| cfg.seeds.iter().map(move |s| (i, *v, *s)))
        .collect();
    let results = run_parallel(jobs.clone(), threads, |(_, variant, seed)| {
        let start = Instant::now();
        let r = train_and_evaluate(&cfg.apply_variant(variant), corpus, seed, &cfg.eval_split);
        if let Ok(r) = &r {
            info!(
                "{variant} seed {seed}: auc {:.4} ({:.1}s)",
                r.metrics.metrics.auc,
                start.elapsed().as_secs_f64()
            );
        }
        r.map(|r| (r.metrics, r.dev_auc))
    });
    let mut per_variant: Vec<(Vec<RunMetrics>, Vec<f64>)> = variants.iter().map(|_| (Vec::new(), Vec::new())).collect();
    for ((i, _, _), r) in jobs.iter().zip(results) {
        let (m, dev) = r?;
        per_variant[*i].0.push(m);
        if let Some(d) = dev {
            per_variant[*i].1.push(d);
        }
    }
    let reports = variants
        .iter()
        .zip(per_variant)
        .map(|(v, (runs, dev_auc))| {
            Ok(VariantReport {
                variant: *v,
                report: MetricReport::from_runs(cfg.seeds.clone(), runs)?,
                dev_auc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let deltas = deltas(&reports);
    let markdown = ablation_markdown(&cfg.eval_split, &cfg.seeds, &reports, &deltas);
    Ok(AblationReport {
        split: cfg.eval_split.clone(),
        seeds: cfg.seeds.clone(),
        variants: reports,
        deltas,
        markdown,
        config: cfg.clone(),
    })
}

/// Finite-difference check of the loss of one training sample.
pub fn run_grad_check(
    cfg: &ExperimentConfig,
    seed: u64,
    step: f64,
    tol: f64,
    coverage: Coverage,
) -> Result<GradCheckReport> {
    let corpus = cfg.corpus()?;
    let model_cfg = cfg.model_config(corpus.vocab.size(), corpus.news.roi_dim());
    let padded = prepare_news(&corpus.news, &corpus.vocab, &model_cfg.encoder);
    let model = MmRec::<f64>::new(model_cfg, seed)?;
    let samples = build_samples(&corpus.train, &corpus.news, cfg.neg_ratio, seed)?.samples;
    // Softmax over a single key has a zero gradient with respect to its
    // logits, so prefer the sample with the most multi-ROI images. One
    // imageless item keeps the placeholder on the checked path.
    let records = corpus.news.records();
    let coverage_score = |s: &TrainingSample| {
        let items: Vec<usize> = s.history.iter().copied().chain(s.candidates()).collect();
        let multi = items.iter().filter(|&&i| records[i].num_rois() >= 2).count();
        let imageless = items.iter().any(|&i| !records[i].has_image);
        (imageless, multi)
    };
    let batch: Vec<_> = samples
        .into_iter()
        .filter(|s| !s.history.is_empty())
        .map(|mut s| {
            // Short histories keep each loss evaluation cheap.
            let keep = s.history.len().saturating_sub(3);
            s.history.drain(..keep);
            s
        })
        .max_by_key(|s| coverage_score(s))
        .into_iter()
        .collect();
    if batch.is_empty() {
        return Err(Error::Data("no training samples for the gradient check".into()));
    }
    let MmRec {
        config,
        mut store,
        encoder,
        scorer,
    } = model;
    let mut shell = MmRec {
        config,
        store: crate::autodiff::ParamStore::new(),
        encoder,
        scorer,
    };
    grad_check(
        &mut store,
        |tape, store| {
            shell.store.clone_from(store);
            batch_loss(&shell, tape, &padded, &batch)
        },
        step,
        tol,
        coverage,
    )
}

#[derive(Debug, Parser)]
#[command(name = "mmrec", about = "Multimodal news recommendation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the generator seed of the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and save a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a split with a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Compare tape gradients with central differences.
    GradCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Check at most this many scalars per parameter tensor.
        #[arg(long)]
        sample: Option<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and score several variants over the configured seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        report: PathBuf,
        /// Dataset directory; overrides the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Runs one parsed command, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<bool> {
    match command {
        Command::GenData { config, out: dir, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.synthetic.seed = s;
            }
            let data = generate_synthetic(&cfg.synthetic)?;
            let vocab = write_dataset(&dir, &data, cfg.min_count)?;
            cfg.write_resolved(&dir)?;
            writeln!(
                out,
                "wrote {} news, {}/{}/{} impressions, vocab {} to {}",
                data.news.len(),
                data.train.len(),
                data.dev.len(),
                data.test.len(),
                vocab.size(),
                dir.display()
            )?;
            Ok(true)
        }
        Command::Train { config, data, out: dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.data_dir = Some(data.clone());
            let corpus = Corpus::load(&data, cfg.m_max)?;
            let model_cfg = cfg.model_config(corpus.vocab.size(), corpus.news.roi_dim());
            let padded = prepare_news(&corpus.news, &corpus.vocab, &model_cfg.encoder);
            let mut model = MmRec::<f64>::new(model_cfg, cfg.seed)?;
            fs::create_dir_all(&dir)?;
            cfg.write_resolved(&dir)?;
            let mut log = fs::File::create(dir.join(TRAIN_LOG_FILE))?;
            let train_data = TrainData {
                news: &corpus.news,
                padded: &padded,
                train: &corpus.train,
                dev: &corpus.dev,
            };
            let report = train(&mut model, train_data, &cfg.train_config(cfg.seed), Some(&mut log))?;
            let last = report.epochs.last();
            let metrics = serde_json::json!({
                "best_epoch": report.best_epoch,
                "final_loss": last.map(|e| e.loss),
                "dev": report.best_epoch.and_then(|b| report.epochs.iter().find(|e| e.epoch == b)).and_then(|e| e.dev),
            });
            save_checkpoint(&model, &corpus.vocab.hash(), report.steps, metrics, &dir)?;
            writeln!(
                out,
                "trained {} steps, final loss {:.5}, checkpoint in {}",
                report.steps,
                last.map(|e| e.loss).unwrap_or(f64::NAN),
                dir.display()
            )?;
            Ok(true)
        }
        Command::Eval {
            checkpoint,
            data,
            report,
            split,
        } => {
            let vocab = Vocabulary::read(data.join(VOCAB_FILE))?;
            let (model, manifest) = load_checkpoint::<f64>(&checkpoint, Some(&vocab.hash()))?;
            let corpus = Corpus::load(&data, model.config.encoder.m_max)?;
            let impressions = corpus
                .split(&split)
                .ok_or_else(|| Error::Config(format!("unknown split {split:?}")))?;
            let padded = prepare_news(&corpus.news, &corpus.vocab, &model.config.encoder);
            let run = {
                let mut scorer = ModelScorer::new(&model, &corpus.news, &padded)?;
                evaluate_impressions(&mut scorer, impressions)?
            };
            let metrics = MetricReport::from_runs(vec![0], vec![run])?;
            write_json(&report, &metrics)?;
            let table = metrics.to_table(manifest.config.variant.name());
            fs::write(sibling(&report, "txt"), &table)?;
            write_json(parent_dir(&report).join(RESOLVED_CONFIG_FILE), &manifest.config)?;
            write!(out, "{table}")?;
            Ok(true)
        }
        Command::GradCheck {
            config,
            seed,
            tol,
            step,
            sample,
            report,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let coverage = match sample {
                Some(n) => Coverage::Sampled { per_param: n, seed },
                None => Coverage::All,
            };
            let start = Instant::now();
            let r = run_grad_check(&cfg, seed, step, tol, coverage)?;
            writeln!(
                out,
                "{} max_rel_err={:.3e} worst={}[{}] (numeric {:.3e}, analytic {:.3e}) checked={} time={:.1}s",
                if r.passed { "PASS" } else { "FAIL" },
                r.max_rel_err,
                r.worst_param,
                r.worst_index,
                r.worst_numeric,
                r.worst_analytic,
                r.checked,
                start.elapsed().as_secs_f64()
            )?;
            if let Some(path) = report {
                write_json(&path, &r)?;
                cfg.write_resolved(parent_dir(&path))?;
            }
            Ok(r.passed)
        }
        Command::Ablate {
            config,
            variants,
            report,
            data,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if data.is_some() {
                cfg.data_dir = data;
            }
            let variants = variants
                .iter()
                .map(|v| v.parse::<Variant>())
                .collect::<Result<Vec<_>>>()?;
            let corpus = cfg.corpus()?;
            let result = ablate(&cfg, &variants, &corpus, worker_threads())?;
            write_json(&report, &result)?;
            fs::write(sibling(&report, "md"), &result.markdown)?;
            cfg.write_resolved(parent_dir(&report))?;
            let rows: Vec<(String, &MetricReport)> = result
                .variants
                .iter()
                .map(|v| (v.variant.to_string(), &v.report))
                .collect();
            write!(out, "{}", render_table(&rows))?;
            Ok(true)
        }
    }
}

/// Parses `argv` and runs the command. Exit codes: 0 success, 1 usage or
/// validation error, 2 runtime failure or failed gradient check.
pub fn run_command<I, S>(argv: I, out: &mut dyn std::io::Write, err: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = write!(err, "{e}");
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match execute(cli.command, out) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
