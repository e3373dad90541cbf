//! Exact ranking metrics over the hard descending sort.
//!
//! Ties in score keep candidate order (stable sort), so metric values are
//! reproducible. Reports are macro averages over slates.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SlateFeatures;
use crate::model::DinParams;

/// Cutoffs reported by [`evaluate`]: the top five cards are what a user sees.
pub const CUTOFFS: [usize; 3] = [1, 3, 5];

/// Candidate indices from best to worst score; equal scores keep index order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    order
}

fn check(scores: &[f64], labels: &[f64]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "metric",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if !labels.iter().any(|&y| y > 0.0) {
        return Err(Error::DegenerateSlate);
    }
    Ok(())
}

fn dcg(gains: impl Iterator<Item = f64>, k: usize) -> f64 {
    gains
        .take(k)
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(scores: &[f64], labels: &[f64], k: usize) -> Result<f64> {
    check(scores, labels)?;
    let gain = |y: f64| 2f64.powf(y) - 1.0;
    let actual = dcg(ranking(scores).into_iter().map(|i| gain(labels[i])), k);
    let mut ideal: Vec<f64> = labels.iter().map(|&y| gain(y)).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    Ok(actual / dcg(ideal.into_iter(), k))
}

pub fn recall_at_k(scores: &[f64], labels: &[f64], k: usize) -> Result<f64> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y > 0.0).count();
    let hits = ranking(scores)
        .into_iter()
        .take(k)
        .filter(|&i| labels[i] > 0.0)
        .count();
    Ok(hits as f64 / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlateMetrics {
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
}

impl SlateMetrics {
    pub fn compute(scores: &[f64], labels: &[f64], cutoffs: &[usize]) -> Result<Self> {
        Ok(Self {
            ndcg: cutoffs
                .iter()
                .map(|&k| ndcg_at_k(scores, labels, k))
                .collect::<Result<_>>()?,
            recall: cutoffs
                .iter()
                .map(|&k| recall_at_k(scores, labels, k))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub ndcg: Vec<f64>,
    pub recall: Vec<f64>,
    pub slates: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_slate: Option<Vec<SlateMetrics>>,
}

impl MetricReport {
    /// Macro average, summed in slate order.
    pub fn from_slates(cutoffs: &[usize], per_slate: Vec<SlateMetrics>, keep: bool) -> Result<Self> {
        if per_slate.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = per_slate.len() as f64;
        let mut ndcg = vec![0.0; cutoffs.len()];
        let mut recall = vec![0.0; cutoffs.len()];
        for s in &per_slate {
            for (acc, v) in ndcg.iter_mut().zip(&s.ndcg) {
                *acc += v;
            }
            for (acc, v) in recall.iter_mut().zip(&s.recall) {
                *acc += v;
            }
        }
        ndcg.iter_mut().chain(recall.iter_mut()).for_each(|v| *v /= n);
        Ok(Self {
            cutoffs: cutoffs.to_vec(),
            ndcg,
            recall,
            slates: per_slate.len(),
            per_slate: keep.then_some(per_slate),
        })
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.ndcg[i])
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().position(|&c| c == k).map(|i| self.recall[i])
    }

    /// `key = value` lines.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "slates = {}", self.slates);
        for (k, v) in self.cutoffs.iter().zip(&self.ndcg) {
            let _ = writeln!(out, "ndcg@{k} = {v}");
        }
        for (k, v) in self.cutoffs.iter().zip(&self.recall) {
            let _ = writeln!(out, "recall@{k} = {v}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub cutoffs: Vec<usize>,
    /// Worker threads for scoring; results do not depend on it.
    pub threads: usize,
    pub keep_per_slate: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cutoffs: CUTOFFS.to_vec(),
            threads: 1,
            keep_per_slate: false,
        }
    }
}

/// Scores every slate with `model` and averages the metrics.
pub fn evaluate(model: &DinParams, dataset: &[SlateFeatures], cfg: &EvalConfig) -> Result<MetricReport> {
    evaluate_with(dataset, cfg, |f| Ok(model.score_features(f)?.scores.into_data()))
}

/// Like [`evaluate`] with an arbitrary scorer.
pub fn evaluate_with<F>(dataset: &[SlateFeatures], cfg: &EvalConfig, scorer: F) -> Result<MetricReport>
where
    F: Fn(&SlateFeatures) -> Result<Vec<f64>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let one = |f: &SlateFeatures| -> Result<SlateMetrics> {
        let scores = scorer(f)?;
        SlateMetrics::compute(&scores, &f.labels, &cfg.cutoffs)
    };
    let threads = cfg.threads.max(1).min(dataset.len());
    let per_slate: Vec<SlateMetrics> = if threads == 1 {
        dataset.iter().map(one).collect::<Result<_>>()?
    } else {
        let chunk = dataset.len().div_ceil(threads);
        let parts: Vec<Result<Vec<SlateMetrics>>> = std::thread::scope(|s| {
            let handles: Vec<_> = dataset
                .chunks(chunk)
                .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>>>()))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(dataset.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    MetricReport::from_slates(&cfg.cutoffs, per_slate, cfg.keep_per_slate)
}
