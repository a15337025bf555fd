//! Per-impression ranking metrics and their aggregation over runs.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImpressionSample, NewsTable};
use crate::encoder::NewsEncoding;
use crate::error::{Error, Result};
use crate::model::MmRec;
use crate::scalar::Scalar;

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Average ranks over tie groups, ascending score order.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*a].partial_cmp(&scores[*b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, l)| **l == 1).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Candidate indices by score descending, ties by index.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| {
        scores[*b]
            .partial_cmp(&scores[*a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(b))
    });
    order
}

/// Mean reciprocal rank over all positives of the impression.
pub fn mrr(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    if n_pos == 0 {
        return None;
    }
    let total: f64 = ranking(scores)
        .iter()
        .enumerate()
        .filter(|(_, idx)| labels[**idx] == 1)
        .map(|(rank, _)| 1.0 / (rank + 1) as f64)
        .sum();
    Some(total / n_pos as f64)
}

pub fn ndcg_at_k(scores: &[f64], labels: &[u8], k: usize) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l == 1).count();
    if n_pos == 0 {
        return None;
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranking(scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, idx)| labels[**idx] == 1)
        .map(|(rank, _)| gain(rank))
        .sum();
    let ideal: f64 = (0..n_pos.min(k)).map(gain).sum();
    Some(dcg / ideal)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
}

impl RankingMetrics {
    pub const NAMES: [&'static str; 4] = ["AUC", "MRR", "NDCG@5", "NDCG@10"];

    pub fn values(&self) -> [f64; 4] {
        [self.auc, self.mrr, self.ndcg5, self.ndcg10]
    }

    fn from_values(v: [f64; 4]) -> Self {
        RankingMetrics {
            auc: v[0],
            mrr: v[1],
            ndcg5: v[2],
            ndcg10: v[3],
        }
    }
}

/// Metrics of one impression, or `None` when it has a single class.
pub fn impression_metrics(scores: &[f64], labels: &[u8]) -> Option<RankingMetrics> {
    Some(RankingMetrics {
        auc: auc(scores, labels)?,
        mrr: mrr(scores, labels)?,
        ndcg5: ndcg_at_k(scores, labels, 5)?,
        ndcg10: ndcg_at_k(scores, labels, 10)?,
    })
}

/// Mean metrics of one run over its impressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub metrics: RankingMetrics,
    pub n_impressions: usize,
    /// Impressions without both a click and a non-click.
    pub skipped: usize,
}

pub trait Scorer {
    fn score(&mut self, impression: &ImpressionSample) -> Result<Vec<f64>>;
}

/// Uniform random scores; the null baseline.
pub struct RandomScorer {
    rng: ChaCha8Rng,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        RandomScorer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Scorer for RandomScorer {
    fn score(&mut self, impression: &ImpressionSample) -> Result<Vec<f64>> {
        Ok(impression.candidates.iter().map(|_| self.rng.random::<f64>()).collect())
    }
}

/// Scores impressions with a model over news encodings computed once.
pub struct ModelScorer<'a, T> {
    model: &'a MmRec<T>,
    news: &'a NewsTable,
    encodings: Vec<NewsEncoding<T>>,
}

impl<'a, T: Scalar> ModelScorer<'a, T> {
    pub fn new(model: &'a MmRec<T>, news: &'a NewsTable, padded: &[crate::dataset::PaddedNews]) -> Result<Self> {
        Ok(ModelScorer {
            model,
            news,
            encodings: model.encode_all(padded)?,
        })
    }

    pub fn encodings(&self) -> &[NewsEncoding<T>] {
        &self.encodings
    }
}

impl<T: Scalar> Scorer for ModelScorer<'_, T> {
    fn score(&mut self, impression: &ImpressionSample) -> Result<Vec<f64>> {
        let history = impression
            .history
            .iter()
            .map(|id| self.news.resolve(id))
            .collect::<Result<Vec<_>>>()?;
        let cands = impression
            .candidates
            .iter()
            .map(|(id, _)| self.news.resolve(id))
            .collect::<Result<Vec<_>>>()?;
        let scores = self.model.score_cached(&self.encodings, &history, &cands)?;
        Ok(scores.into_iter().map(|s| s.as_f64()).collect())
    }
}

/// Mean of each metric over impressions, in input order.
pub fn evaluate_impressions<S: Scorer + ?Sized>(
    scorer: &mut S,
    impressions: &[ImpressionSample],
) -> Result<RunMetrics> {
    let mut sums = [0.0; 4];
    let mut n = 0;
    let mut skipped = 0;
    for imp in impressions {
        let scores = scorer.score(imp)?;
        if scores.len() != imp.candidates.len() {
            return Err(Error::shape("scorer output", &[scores.len()], &[imp.candidates.len()]));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
        match impression_metrics(&scores, &imp.labels()) {
            Some(m) => {
                for (s, v) in sums.iter_mut().zip(m.values()) {
                    *s += v;
                }
                n += 1;
            }
            None => skipped += 1,
        }
    }
    if n == 0 {
        return Err(Error::Data(
            "no impression has both clicked and non-clicked candidates".into(),
        ));
    }
    Ok(RunMetrics {
        metrics: RankingMetrics::from_values(sums.map(|s| s / n as f64)),
        n_impressions: n,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Sample mean and standard deviation (`n − 1`); the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

/// Metrics aggregated over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: MeanStd,
    pub mrr: MeanStd,
    pub ndcg5: MeanStd,
    pub ndcg10: MeanStd,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
    pub n_impressions: usize,
}

impl MetricReport {
    pub fn from_runs(seeds: Vec<u64>, runs: Vec<RunMetrics>) -> Result<Self> {
        if runs.is_empty() || seeds.len() != runs.len() {
            return Err(Error::Data(format!("{} seeds for {} runs", seeds.len(), runs.len())));
        }
        let column = |i: usize| mean_std(&runs.iter().map(|r| r.metrics.values()[i]).collect::<Vec<_>>());
        Ok(MetricReport {
            auc: column(0),
            mrr: column(1),
            ndcg5: column(2),
            ndcg10: column(3),
            n_impressions: runs[0].n_impressions,
            seeds,
            runs,
        })
    }

    pub fn columns(&self) -> [MeanStd; 4] {
        [self.auc, self.mrr, self.ndcg5, self.ndcg10]
    }

    /// Plain-text table with values ×100 as mean±std.
    pub fn to_table(&self, label: &str) -> String {
        render_table(&[(label.to_string(), self)])
    }
}

pub fn format_cell(m: MeanStd) -> String {
    format!("{:.2}±{:.2}", m.mean * 100.0, m.std * 100.0)
}

/// Aligned plain-text table, one row per labelled report.
pub fn render_table(rows: &[(String, &MetricReport)]) -> String {
    let mut header = vec!["Method".to_string()];
    header.extend(RankingMetrics::NAMES.iter().map(|s| s.to_string()));
    let mut body: Vec<Vec<String>> = vec![header];
    for (label, r) in rows {
        let mut row = vec![label.clone()];
        row.extend(r.columns().iter().map(|c| format_cell(*c)));
        body.push(row);
    }
    let widths: Vec<usize> = (0..body[0].len())
        .map(|c| body.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &body {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (cell, w))| {
                let pad = w - cell.chars().count();
                if i == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
