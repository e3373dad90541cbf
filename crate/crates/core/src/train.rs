//! Mini-batch Adam training with early stopping, and the ablation harness.
//!
//! A batch is split into fixed chunks of [`CHUNK`] slates. Each chunk sums
//! its per-slate gradients in slate order and chunk sums are added in chunk
//! order, so the update is bit-identical whatever the number of worker
//! threads.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::features::{embed_slate, Slate, SlateFeatures};
use crate::loss::{neural_ndcg_loss, pointwise_loss, NeuralNdcgConfig};
use crate::metrics::{evaluate, EvalConfig, MetricReport, CUTOFFS};
use crate::model::{forward, DinParams, ModelConfig};

/// Slates per gradient chunk.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Listwise,
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    pub neural_ndcg: NeuralNdcgConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 512,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 20,
            patience: 5,
            loss: LossKind::Listwise,
            neural_ndcg: NeuralNdcgConfig::default(),
            grad_clip: Some(10.0),
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if !(self.neural_ndcg.temperature > 0.0) {
            return Err(Error::Config("neural_ndcg.temperature must be positive".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` with gradients `grads`.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], cfg: &TrainConfig) -> Result<()> {
        let mismatch = params.len() != grads.len()
            || params.len() != self.m.len()
            || params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len());
        if mismatch {
            return Err(Error::Dimension {
                op: "adam_step",
                left: params.iter().map(Tensor::len).collect(),
                right: grads.iter().map(Vec::len).collect(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
        Ok(())
    }
}

/// Loss of one slate and its gradient with respect to every parameter.
pub fn slate_gradient(
    params: &DinParams,
    slate: &SlateFeatures,
    loss: LossKind,
    ndcg: &NeuralNdcgConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let vars = params.record(&mut g);
    let enc = embed_slate(&mut g, &vars, slate, &params.config().encoding)?;
    let out = forward(&mut g, &vars, &enc, params.config())?;
    let root = match loss {
        LossKind::Listwise => neural_ndcg_loss(&mut g, out.scores, &slate.labels, ndcg)?,
        LossKind::Pointwise => pointwise_loss(&mut g, out.logits, &slate.labels)?,
    };
    let value = g.value(root).data()[0];
    let mut grads = g.backward(root)?;
    let per_param = vars
        .all
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| match grads.take(v) {
            Some(gt) => gt.into_data(),
            None => vec![0.0; t.len()],
        })
        .collect();
    Ok((value, per_param))
}

fn accumulate(acc: &mut [Vec<f64>], add: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(add) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn chunk_gradient(
    params: &DinParams,
    slates: &[&SlateFeatures],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut loss = 0.0;
    let mut acc: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for s in slates {
        let (l, g) = slate_gradient(params, s, cfg.loss, &cfg.neural_ndcg)?;
        loss += l;
        accumulate(&mut acc, &g);
    }
    Ok((loss, acc))
}

/// Mean loss and mean gradient over `batch`.
pub fn batch_gradient(
    params: &DinParams,
    batch: &[&SlateFeatures],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let chunks: Vec<&[&SlateFeatures]> = batch.chunks(CHUNK).collect();
    let threads = cfg.threads.max(1).min(chunks.len().max(1));
    let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = if threads == 1 {
        chunks.iter().map(|c| chunk_gradient(params, c, cfg)).collect()
    } else {
        let per_worker = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per_worker)
                .map(|group| {
                    s.spawn(move || {
                        group
                            .iter()
                            .map(|c| chunk_gradient(params, c, cfg))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("training worker panicked"))
                .collect()
        })
    };
    let mut loss = 0.0;
    let mut grads: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for r in results {
        let (l, g) = r?;
        loss += l;
        accumulate(&mut grads, &g);
    }
    let n = batch.len() as f64;
    grads.iter_mut().flatten().for_each(|x| *x /= n);
    Ok((loss / n, grads))
}

pub fn global_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

/// One record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "val_ndcg@1")]
    pub val_ndcg_at_1: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation nDCG@1.
    pub model: DinParams,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ndcg_at_1: f64,
    pub stopped_early: bool,
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    idx
}

pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[SlateFeatures],
    val_set: &[SlateFeatures],
) -> Result<TrainOutcome> {
    train_with(model_cfg, cfg, train_set, val_set, |_| {})
}

/// Like [`train`], calling `on_epoch` after each epoch.
pub fn train_with(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &[SlateFeatures],
    val_set: &[SlateFeatures],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = DinParams::init(model_cfg, cfg.seed)?;
    fit(params, cfg, train_set, val_set, &mut on_epoch)
}

/// Continues training from existing parameters.
pub fn fit(
    mut params: DinParams,
    cfg: &TrainConfig,
    train_set: &[SlateFeatures],
    val_set: &[SlateFeatures],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eval_cfg = EvalConfig {
        cutoffs: vec![1],
        threads: cfg.threads,
        keep_per_slate: false,
    };
    let start = Instant::now();
    let mut adam = AdamState::new(params.tensors());
    let mut log = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut batch_index = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let order = shuffled(train_set.len(), cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&SlateFeatures> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradient(&params, &batch, cfg)?;
            let norm = global_norm(&grads);
            if !loss.is_finite() || !norm.is_finite() {
                return Err(Error::Divergence {
                    batch: batch_index,
                    norms: params.norms_summary(),
                });
            }
            if let Some(clip) = cfg.grad_clip {
                if norm > clip {
                    let s = clip / norm;
                    grads.iter_mut().flatten().for_each(|x| *x *= s);
                }
            }
            adam.step(params.tensors_mut(), &grads, cfg)?;
            if !params.tensors().iter().all(|t| t.all_finite()) {
                return Err(Error::Divergence {
                    batch: batch_index,
                    norms: params.norms_summary(),
                });
            }
            loss_sum += loss * batch.len() as f64;
            batch_index += 1;
        }
        let val = evaluate(&params, val_set, &eval_cfg)?.ndcg[0];
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_ndcg_at_1: val,
            wall_time: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        log.push(record);
        if val > best.2 {
            best = (params.clone(), epoch, val);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        log,
        best_epoch: best.1,
        best_val_ndcg_at_1: best.2,
        stopped_early,
    })
}

/// Encodes every slate with `model_cfg`'s encoding settings.
pub fn encode_all(slates: &[Slate], model_cfg: &ModelConfig) -> Result<Vec<SlateFeatures>> {
    slates
        .iter()
        .map(|s| SlateFeatures::new(s, &model_cfg.encoding))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Full,
    Pointwise,
    NoPositionalEncoding,
    NoUrgency,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::Pointwise,
        Variant::NoPositionalEncoding,
        Variant::NoUrgency,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "Full",
            Variant::Pointwise => "Pointwise Loss",
            Variant::NoPositionalEncoding => "w/o Pos. Encoding",
            Variant::NoUrgency => "w/o Urgency Feats",
        }
    }

    /// Model and training settings for this variant, derived from the full ones.
    pub fn configure(self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let (mut m, mut t) = (model.clone(), train.clone());
        match self {
            Variant::Full => {}
            Variant::Pointwise => t.loss = LossKind::Pointwise,
            Variant::NoPositionalEncoding => m.encoding.use_positional_encoding = false,
            Variant::NoUrgency => m.encoding.use_urgency_features = false,
        }
        (m, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    /// Test metrics of each seed.
    pub runs: Vec<MetricReport>,
    /// `[nDCG@1, nDCG@3, nDCG@5, Recall@1, Recall@3, Recall@5]` averaged over seeds.
    pub mean: [f64; 6],
}

impl AblationRow {
    /// nDCG@1 of each seed.
    pub fn ndcg_at_1(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.ndcg[0]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "| {:<18} | nDCG@1 | nDCG@3 | nDCG@5 | Recall@1 | Recall@3 | Recall@5 |",
            "Variant"
        );
        let _ = writeln!(out, "|{:-<20}|--------|--------|--------|----------|----------|----------|", "");
        for r in &self.rows {
            let m = r.mean;
            let _ = writeln!(
                out,
                "| {:<18} | {:.4} | {:.4} | {:.4} |   {:.4} |   {:.4} |   {:.4} |",
                r.label, m[0], m[1], m[2], m[3], m[4], m[5]
            );
        }
        out
    }
}

/// Trains every variant once per seed and reports test metrics.
pub fn run_ablation(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[Slate],
    val_set: &[Slate],
    test_set: &[Slate],
    seeds: &[u64],
    variants: &[Variant],
    mut progress: impl FnMut(Variant, u64, &MetricReport),
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let eval_cfg = EvalConfig {
        cutoffs: CUTOFFS.to_vec(),
        threads: train_cfg.threads,
        keep_per_slate: false,
    };
    let mut rows = Vec::new();
    for &variant in variants {
        let (m_cfg, t_cfg) = variant.configure(model_cfg, train_cfg);
        let tr = encode_all(train_set, &m_cfg)?;
        let va = encode_all(val_set, &m_cfg)?;
        let te = encode_all(test_set, &m_cfg)?;
        let mut runs = Vec::new();
        for &seed in seeds {
            let t = TrainConfig { seed, ..t_cfg.clone() };
            let outcome = train(&m_cfg, &t, &tr, &va)?;
            let report = evaluate(&outcome.model, &te, &eval_cfg)?;
            progress(variant, seed, &report);
            runs.push(report);
        }
        let mut mean = [0.0; 6];
        for r in &runs {
            for (i, v) in r.ndcg.iter().chain(&r.recall).enumerate() {
                mean[i] += v / runs.len() as f64;
            }
        }
        rows.push(AblationRow {
            variant,
            label: variant.label().to_string(),
            runs,
            mean,
        });
    }
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}
