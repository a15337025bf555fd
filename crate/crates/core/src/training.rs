//! Negative sampling, loss, Adam and the training loop, plus checkpoint I/O.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::{info, warn};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::dataset::{FeatureMatrix, ImpressionSample, NewsTable, PaddedNews};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_impressions, ModelScorer, RankingMetrics};
use crate::model::{MmRec, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Negatives per clicked candidate.
    pub neg_ratio: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    /// Evaluate on the dev split after every epoch and keep the best weights.
    pub eval_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Settings for training from random initialization.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 5,
            neg_ratio: 4,
            seed: 7,
            grad_clip_norm: Some(5.0),
            eval_dev: true,
        }
    }

    /// Settings for fine-tuning a pretrained encoder.
    pub fn finetune() -> Self {
        TrainConfig {
            lr: 1e-5,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.neg_ratio < 1 {
            return Err(Error::Config("neg_ratio must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip_norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One clicked candidate with negatives from the same impression. Ids are
/// positions in the news table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSample {
    pub history: Vec<usize>,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

impl TrainingSample {
    /// Positive first, then the negatives.
    pub fn candidates(&self) -> Vec<usize> {
        let mut c = Vec::with_capacity(1 + self.negatives.len());
        c.push(self.positive);
        c.extend(&self.negatives);
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub samples: Vec<TrainingSample>,
    /// Impressions with clicks but no non-clicked candidates.
    pub skipped: usize,
}

/// One sample per clicked candidate. Negatives are drawn without replacement
/// when the impression has at least `k_neg` of them, with replacement otherwise.
pub fn build_samples(impressions: &[ImpressionSample], news: &NewsTable, k_neg: usize, seed: u64) -> Result<SampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SampleSet::default();
    for imp in impressions {
        let history = imp
            .history
            .iter()
            .map(|id| news.resolve(id))
            .collect::<Result<Vec<_>>>()?;
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (id, label) in &imp.candidates {
            let p = news.resolve(id)?;
            if *label == 1 {
                pos.push(p);
            } else {
                neg.push(p);
            }
        }
        if pos.is_empty() {
            continue;
        }
        if neg.is_empty() && k_neg > 0 {
            out.skipped += 1;
            continue;
        }
        for p in pos {
            let negatives = if neg.len() >= k_neg {
                index::sample(&mut rng, neg.len(), k_neg)
                    .iter()
                    .map(|i| neg[i])
                    .collect()
            } else {
                (0..k_neg).map(|_| neg[rng.random_range(0..neg.len())]).collect()
            };
            out.samples.push(TrainingSample {
                history: history.clone(),
                positive: p,
                negatives,
            });
        }
    }
    if out.skipped > 0 {
        warn!("skipped {} impressions without non-clicked candidates", out.skipped);
    }
    Ok(out)
}

/// `−log softmax(scores)[0]`: cross-entropy with the first score as target.
pub fn nce_loss(scores: &[f64]) -> f64 {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    lse - scores[0]
}

/// Records the mean loss of a batch on `tape`.
pub fn batch_loss<T: Scalar>(
    model: &MmRec<T>,
    tape: &mut Tape<T>,
    news: &[PaddedNews],
    batch: &[TrainingSample],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let p_max = model.config.p_max;
    let positions = batch.iter().flat_map(|s| {
        let h = &s.history[s.history.len().saturating_sub(p_max)..];
        h.iter()
            .copied()
            .chain(std::iter::once(s.positive))
            .chain(s.negatives.iter().copied())
    });
    let encoded = model.encode_batch(tape, news, positions)?;
    let mut total: Option<Var> = None;
    for s in batch {
        let cands = s.candidates();
        let scores = model.score_on_tape(tape, &encoded, &s.history, &cands)?;
        let scores = tape.reshape(scores, &[1, cands.len()])?;
        let loss = tape.cross_entropy(scores, 0)?;
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.expect("non-empty batch");
    Ok(tape.scale(total, T::one() / T::c(batch.len() as f64)))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Adam {
            m: store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect(),
            v: store.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients in `store`. Frozen parameters
    /// and parameters without a gradient are left alone. Returns the global
    /// gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore<T>, cfg: &TrainConfig) -> Result<f64> {
        let mut norm_sq = 0.0;
        for (_, p) in store.iter() {
            if p.frozen {
                continue;
            }
            if let Some(g) = &p.grad {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(Error::NanGradient { param: p.name.clone() });
                }
                norm_sq += g.norm_sq().as_f64();
            }
        }
        let norm = norm_sq.sqrt();
        let clip = match cfg.grad_clip_norm {
            Some(c) if norm > c => T::c(c / norm),
            _ => T::one(),
        };
        self.t += 1;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let c1 = T::one() - T::c(cfg.beta1.powi(self.t as i32));
        let c2 = T::one() - T::c(cfg.beta2.powi(self.t as i32));
        let lr = T::c(cfg.lr);
        let eps = T::c(cfg.adam_eps);
        for (i, p) in store.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let Some(g) = &p.grad else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = *g * clip;
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

/// Inputs of a training run.
#[derive(Clone, Copy)]
pub struct TrainData<'a> {
    pub news: &'a NewsTable,
    pub padded: &'a [PaddedNews],
    pub train: &'a [ImpressionSample],
    pub dev: &'a [ImpressionSample],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub steps: u64,
    pub samples: usize,
    pub dev: Option<RankingMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept (best dev AUC), if dev evaluation ran.
    pub best_epoch: Option<usize>,
    pub steps: u64,
}

/// Owns the optimizer and sampling state across epochs.
pub struct Trainer<T> {
    pub config: TrainConfig,
    adam: Adam<T>,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &MmRec<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            adam: Adam::new(&model.store),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            epoch: 0,
            config,
        })
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// One pass over freshly sampled, shuffled training samples. Returns the
    /// mean batch loss.
    pub fn run_epoch(&mut self, model: &mut MmRec<T>, data: TrainData<'_>) -> Result<(f64, usize)> {
        let sample_seed = self.rng.random::<u64>();
        let mut samples = build_samples(data.train, data.news, self.config.neg_ratio, sample_seed)?.samples;
        if samples.is_empty() {
            return Err(Error::Data("no training samples".into()));
        }
        samples.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in samples.chunks(self.config.batch_size) {
            model.store.zero_grad();
            let mut tape = Tape::new();
            let loss = batch_loss(model, &mut tape, data.padded, batch)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite { index: batches });
            }
            tape.backward(loss, &mut model.store)?;
            self.adam.step(&mut model.store, &self.config)?;
            total += value;
            batches += 1;
        }
        self.epoch += 1;
        model.store.zero_grad();
        Ok((total / batches as f64, samples.len()))
    }
}

/// Dev-split metrics of the current weights.
pub fn dev_metrics<T: Scalar>(model: &MmRec<T>, data: TrainData<'_>) -> Result<RankingMetrics> {
    let mut scorer = ModelScorer::new(model, data.news, data.padded)?;
    Ok(evaluate_impressions(&mut scorer, data.dev)?.metrics)
}

/// Trains for `cfg.epochs` epochs, writing one JSON line per epoch to `log`.
/// With dev evaluation on, the weights of the best dev-AUC epoch are kept.
pub fn train<T: Scalar>(
    model: &mut MmRec<T>,
    data: TrainData<'_>,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainReport> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let use_dev = cfg.eval_dev && !data.dev.is_empty();
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let (loss, samples) = trainer.run_epoch(model, data)?;
        let dev = if use_dev { Some(dev_metrics(model, data)?) } else { None };
        if let Some(d) = &dev {
            if best.as_ref().is_none_or(|b| d.auc > b.0) {
                best = Some((d.auc, epoch, model.store.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            loss,
            steps: trainer.steps(),
            samples,
            dev,
        };
        info!(
            "epoch {epoch}: loss {loss:.5}{}",
            dev.map(|d| format!(" dev auc {:.4}", d.auc)).unwrap_or_default()
        );
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&entry)?)?;
        }
        epochs.push(entry);
    }
    let best_epoch = best.map(|(_, epoch, store)| {
        model.store = store;
        epoch
    });
    Ok(TrainReport {
        epochs,
        best_epoch,
        steps: trainer.steps(),
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.mmrf";
const CHECKPOINT_FORMAT: &str = "mmrec-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in scalars into the flat parameter blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub step: u64,
    #[serde(default)]
    pub metrics: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

/// Writes `manifest.json` and `params.mmrf` (float32) into `dir`.
pub fn save_checkpoint<T: Scalar>(
    model: &MmRec<T>,
    vocab_hash: &str,
    step: u64,
    metrics: serde_json::Value,
    dir: impl AsRef<Path>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(model.store.len());
    let mut blob = Vec::with_capacity(model.store.num_scalars());
    for (_, p) in model.store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: blob.len(),
        });
        blob.extend(p.value.data().iter().map(|v| v.as_f64() as f32));
    }
    let n = blob.len();
    fs::write(dir.join(PARAMS_FILE), FeatureMatrix::new(n, 1, blob)?.to_bytes()?)?;
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config.clone(),
        vocab_hash: vocab_hash.into(),
        step,
        metrics,
        params,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Config(format!(
            "unsupported checkpoint format {} v{}",
            manifest.format, manifest.version
        )));
    }
    Ok(manifest)
}

/// Copies checkpoint weights into `model`, which must have the same
/// parameter names and shapes.
pub fn restore_into<T: Scalar>(
    model: &mut MmRec<T>,
    dir: impl AsRef<Path>,
    expected_vocab: Option<&str>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    if let Some(expected) = expected_vocab {
        if expected != manifest.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: expected.into(),
                found: manifest.vocab_hash.clone(),
            });
        }
    }
    let blob = FeatureMatrix::from_bytes(&fs::read(dir.join(PARAMS_FILE))?)?;
    let mut seen = std::collections::HashSet::new();
    for entry in &manifest.params {
        if !seen.insert(entry.name.as_str()) {
            return Err(Error::Config(format!("parameter {} listed twice", entry.name)));
        }
        if model.store.id(&entry.name).is_none() {
            return Err(Error::Config(format!("unexpected parameter {}", entry.name)));
        }
    }
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = model.store.get_mut(id);
        let entry = manifest
            .params
            .iter()
            .find(|e| e.name == p.name)
            .ok_or_else(|| Error::MissingParameter(p.name.clone()))?;
        if entry.shape != p.value.shape() {
            return Err(Error::ParamShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: entry.shape.clone(),
            });
        }
        let n = p.value.len();
        let values = blob.data.get(entry.offset..entry.offset + n).ok_or_else(|| {
            Error::format(
                (entry.offset * 4) as u64,
                format!("parameter {} past end of blob", p.name),
            )
        })?;
        let data = values.iter().map(|v| T::from_f32_bits(*v)).collect();
        p.value = Tensor::new(entry.shape.clone(), data)?;
        p.grad = None;
    }
    Ok(manifest)
}

/// Rebuilds the model described by the manifest and loads its weights.
pub fn load_checkpoint<T: Scalar>(dir: impl AsRef<Path>, expected_vocab: Option<&str>) -> Result<(MmRec<T>, Manifest)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut model = MmRec::new(manifest.config.clone(), 0)?;
    let manifest = restore_into(&mut model, dir, expected_vocab)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    fn imp(cands: &[(&str, u8)]) -> ImpressionSample {
        ImpressionSample {
            impression_id: "i".into(),
            user_id: "u".into(),
            history: vec!["h".into()],
            candidates: cands.iter().map(|(n, l)| (n.to_string(), *l)).collect(),
        }
    }

    fn table() -> NewsTable {
        let rec = |id: &str| crate::dataset::NewsRecord {
            news_id: id.into(),
            title: id.into(),
            tokens: vec![id.into()],
            roi_features: vec![],
            roi_boxes: vec![],
            has_image: false,
        };
        NewsTable::new(["h", "a", "b", "c", "d", "e", "f"].iter().map(|i| rec(i)).collect(), 4).unwrap()
    }

    #[test]
    fn sampling_examples() {
        let t = table();
        let s = build_samples(&[imp(&[("a", 1), ("b", 0), ("c", 0), ("d", 0), ("e", 0)])], &t, 4, 1).unwrap();
        assert_eq!(s.samples.len(), 1);
        let mut negs = s.samples[0].negatives.clone();
        negs.sort();
        assert_eq!(negs, vec![2, 3, 4, 5]);

        let s = build_samples(&[imp(&[("a", 1), ("b", 0), ("c", 0)])], &t, 4, 1).unwrap();
        assert_eq!(s.samples[0].negatives.len(), 4);
        assert!(s.samples[0].negatives.iter().all(|n| *n == 2 || *n == 3));

        let s = build_samples(&[imp(&[("a", 1), ("b", 0), ("c", 1)])], &t, 1, 1).unwrap();
        assert_eq!(s.samples.iter().map(|x| x.positive).collect::<Vec<_>>(), vec![1, 3]);

        let s = build_samples(&[imp(&[("a", 1), ("c", 1)])], &t, 4, 1).unwrap();
        assert!(s.samples.is_empty());
        assert_eq!(s.skipped, 1);
    }

    #[test]
    fn sampling_is_deterministic() {
        let t = table();
        let imps = vec![imp(&[("a", 1), ("b", 0), ("c", 0), ("d", 0), ("e", 0), ("f", 0)]); 5];
        assert_eq!(
            build_samples(&imps, &t, 2, 9).unwrap(),
            build_samples(&imps, &t, 2, 9).unwrap()
        );
    }

    #[test]
    fn loss_examples() {
        assert!((nce_loss(&[0.3; 5]) - 5f64.ln()).abs() < 1e-15);
        assert!((nce_loss(&[2.0, 0.0]) - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!((nce_loss(&[2.0, 0.0]) - 0.12693).abs() < 1e-5);
        assert!(nce_loss(&[50.0, 0.0, 0.0]) < 1e-20);
    }

    #[test]
    fn loss_monotone_in_scores() {
        let base = [0.4, -0.2, 1.1, 0.3];
        let l0 = nce_loss(&base);
        let mut up = base;
        up[0] += 0.1;
        assert!(nce_loss(&up) < l0);
        for i in 1..base.len() {
            let mut s = base;
            s[i] += 0.1;
            assert!(nce_loss(&s) > l0);
        }
    }

    #[test]
    fn positive_gradient_is_p_minus_one() {
        let scores = [0.4, -0.2, 1.1, 0.3];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::matrix(1, 4, scores.to_vec()).unwrap().with_requires_grad(true));
        let loss = tape.cross_entropy(x, 0).unwrap();
        tape.backward(loss, &mut ParamStore::new()).unwrap();
        let g = tape.grad(x).unwrap();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let p0 = scores[0].exp() / z;
        assert!((g.data()[0] - (p0 - 1.0)).abs() < 1e-15);
        assert!(g.data()[0] <= 0.0);
    }

    fn single_param_store(value: f64, grad: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::row(vec![value]).unwrap()).unwrap();
        store.get_mut(id).grad = Some(Tensor::row(vec![grad]).unwrap());
        store
    }

    #[test]
    fn adam_first_step() {
        let cfg = TrainConfig {
            lr: 0.1,
            grad_clip_norm: None,
            ..TrainConfig::desk()
        };
        let mut store = single_param_store(0.0, 1.0);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &cfg).unwrap();
        let w = store.by_name("w").unwrap().value.data()[0];
        assert!((w - (-0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_and_frozen() {
        let cfg = TrainConfig::desk();
        let mut store = single_param_store(0.5, 0.0);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &cfg).unwrap();
        assert_eq!(store.by_name("w").unwrap().value.data()[0], 0.5);

        let mut store = single_param_store(0.5, 3.0);
        let id = store.id("w").unwrap();
        store.set_frozen(id, true);
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &cfg).unwrap();
        assert_eq!(store.by_name("w").unwrap().value.data()[0], 0.5);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut store = single_param_store(0.5, 1.0);
        let id = store.id("w").unwrap();
        store.get_mut(id).grad = Some(Tensor::from_parts(vec![1, 1], vec![f64::NAN]));
        let mut adam = Adam::new(&store);
        match adam.step(&mut store, &TrainConfig::desk()) {
            Err(Error::NanGradient { param }) => assert_eq!(param, "w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::<f64>::row(vec![0.0, 0.0]).unwrap()).unwrap();
        store.get_mut(id).grad = Some(Tensor::row(vec![30.0, 40.0]).unwrap());
        let mut adam = Adam::new(&store);
        let cfg = TrainConfig {
            grad_clip_norm: Some(5.0),
            ..TrainConfig::desk()
        };
        let norm = adam.step(&mut store, &cfg).unwrap();
        assert_eq!(norm, 50.0);
        // After clipping the first moment is (1−β₁)·(3, 4).
        assert!((adam.m[0][0] - 0.1 * 3.0).abs() < 1e-12);
        assert!((adam.m[0][1] - 0.1 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::desk().validate().is_ok());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::desk()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            neg_ratio: 0,
            ..TrainConfig::desk()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::desk()
        }
        .validate()
        .is_err());
        assert_eq!(TrainConfig::finetune().lr, 1e-5);
        assert_eq!(TrainConfig::finetune().batch_size, 32);
    }
}
