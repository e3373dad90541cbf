//! Ranking losses.
//!
//! The listwise loss is the negative of an expected nDCG. Scores are relaxed
//! into a soft permutation matrix with deterministic NeuralSort,
//!
//! ```text
//! P[i, :] = softmax( ((m + 1 - 2(i + 1)) s - A 1) / τ ),   A[j, k] = |s_j - s_k|
//! ```
//!
//! (rows are 0-based ranks), the matrix is pushed towards doubly stochastic
//! with Sinkhorn scaling, and the soft-sorted gains `P g` are discounted as
//! in DCG. As `τ → 0` the relaxation converges to the hard descending sort
//! and the loss to `-nDCG`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuralNdcgConfig {
    pub temperature: f64,
    pub sinkhorn_iters: usize,
    /// Truncation rank of the expected DCG; `None` scores the whole slate.
    pub cutoff: Option<usize>,
}

impl Default for NeuralNdcgConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            sinkhorn_iters: 30,
            cutoff: None,
        }
    }
}

/// Row-stochastic relaxation of a permutation matrix; row `r` is a
/// distribution over which item lands at rank `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutation {
    pub matrix: Tensor,
    pub temperature: f64,
}

impl SoftPermutation {
    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.size()).map(|r| self.matrix.row(r).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let m = self.size();
        (0..m)
            .map(|c| (0..m).map(|r| self.matrix.data()[r * m + c]).sum())
            .collect()
    }
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {tau}"
        )));
    }
    Ok(())
}

/// Deterministic NeuralSort of a score vector: an `m x m` row-stochastic matrix.
pub fn neural_sort(g: &mut Graph<'_>, scores: Var, temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let m = g.value(scores).len();
    if m == 0 {
        return Err(Error::InvalidParameter("cannot sort an empty score vector".into()));
    }
    let s = g.reshape(scores, vec![m])?;
    let diffs = g.outer_diff(s, s)?;
    let abs_diffs = g.abs(diffs);
    let spread = g.sum_axis(abs_diffs, 1)?;
    let coeff: Vec<f64> = (0..m).map(|i| (m as f64 + 1.0) - 2.0 * (i as f64 + 1.0)).collect();
    let coeff = g.constant(Tensor::matrix(m, 1, coeff)?);
    let s_row = g.reshape(s, vec![1, m])?;
    let scaled = g.matmul(coeff, s_row)?;
    let neg_spread = g.neg(spread);
    let logits = g.add_bias(scaled, neg_spread)?;
    let logits = g.scale(logits, 1.0 / temperature);
    g.softmax(logits)
}

/// `iters` rounds of row normalization followed by column normalization.
pub fn sinkhorn(g: &mut Graph<'_>, p: Var, iters: usize) -> Result<Var> {
    let mut p = p;
    for _ in 0..iters {
        p = g.normalize_rows(p);
        let t = g.transpose(p)?;
        let t = g.normalize_rows(t);
        p = g.transpose(t)?;
    }
    Ok(p)
}

fn gain(y: f64) -> f64 {
    2f64.powf(y) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

/// DCG of the ideal ordering of `labels`, truncated at `cutoff`.
pub fn ideal_dcg(labels: &[f64], cutoff: Option<usize>) -> f64 {
    let mut gains: Vec<f64> = labels.iter().map(|&y| gain(y)).collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    let k = cutoff.unwrap_or(gains.len()).min(gains.len());
    gains[..k].iter().enumerate().map(|(r, &gv)| gv * discount(r)).sum()
}

/// `-neuralNDCG(scores, labels)`.
pub fn neural_ndcg_loss(g: &mut Graph<'_>, scores: Var, labels: &[f64], cfg: &NeuralNdcgConfig) -> Result<Var> {
    let m = g.value(scores).len();
    if labels.len() != m {
        return Err(Error::Dimension {
            op: "neural_ndcg_loss",
            left: g.value(scores).shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let max_dcg = ideal_dcg(labels, cfg.cutoff);
    if !(max_dcg > 0.0) {
        return Err(Error::DegenerateSlate);
    }
    let p = neural_sort(g, scores, cfg.temperature)?;
    let p = sinkhorn(g, p, cfg.sinkhorn_iters)?;
    let gains = g.constant(Tensor::matrix(m, 1, labels.iter().map(|&y| gain(y)).collect())?);
    let sorted_gains = g.matmul(p, gains)?;
    let k = cfg.cutoff.unwrap_or(m);
    let disc = (0..m).map(|r| if r < k { discount(r) } else { 0.0 }).collect();
    let disc = g.constant(Tensor::matrix(m, 1, disc)?);
    let weighted = g.mul(sorted_gains, disc)?;
    let dcg = g.sum(weighted);
    Ok(g.scale(dcg, -1.0 / max_dcg))
}

/// Mean binary cross-entropy of the two-logit softmax, `logits` shaped `m x 2`
/// as `[positive, negative]`.
pub fn pointwise_loss(g: &mut Graph<'_>, logits: Var, labels: &[f64]) -> Result<Var> {
    let t = g.value(logits);
    if t.rank() != 2 || t.cols() != 2 || t.rows() != labels.len() {
        return Err(Error::Dimension {
            op: "pointwise_loss",
            left: t.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let m = labels.len();
    let diff = g.constant(Tensor::matrix(2, 1, vec![1.0, -1.0])?);
    let margin = g.matmul(logits, diff)?;
    let margin = g.reshape(margin, vec![m])?;
    // log p(pos) = log σ(l_pos - l_neg), log p(neg) = log σ(l_neg - l_pos)
    let log_pos = g.log_sigmoid(margin);
    let neg_margin = g.neg(margin);
    let log_neg = g.log_sigmoid(neg_margin);
    let y = g.constant(Tensor::vector(labels.to_vec()));
    let not_y = g.constant(Tensor::vector(labels.iter().map(|&v| 1.0 - v).collect()));
    let a = g.mul(y, log_pos)?;
    let b = g.mul(not_y, log_neg)?;
    let ll = g.add(a, b)?;
    let mean = g.mean(ll);
    Ok(g.neg(mean))
}

/// Value-level NeuralSort.
pub fn neural_sort_matrix(scores: &[f64], temperature: f64) -> Result<SoftPermutation> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::vector(scores.to_vec()));
    let p = neural_sort(&mut g, s, temperature)?;
    Ok(SoftPermutation {
        matrix: g.value(p).clone(),
        temperature,
    })
}

/// Value-level Sinkhorn scaling.
pub fn sinkhorn_matrix(p: &SoftPermutation, iters: usize) -> Result<SoftPermutation> {
    let mut g = Graph::new();
    let v = g.constant(p.matrix.clone());
    let out = sinkhorn(&mut g, v, iters)?;
    Ok(SoftPermutation {
        matrix: g.value(out).clone(),
        temperature: p.temperature,
    })
}

/// Value-level listwise loss.
pub fn neural_ndcg_loss_value(scores: &[f64], labels: &[f64], cfg: &NeuralNdcgConfig) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(Tensor::vector(scores.to_vec()));
    let loss = neural_ndcg_loss(&mut g, s, labels, cfg)?;
    Ok(g.value(loss).data()[0])
}
