//! Target-attention scorer.
//!
//! For every candidate `i` the attention unit looks at each history action
//! `v(a_j)` together with the candidate's features `z_i`, producing one logit
//! per action. A masked softmax over the history turns the logits into
//! weights `α_ij`, and the interest vector is `v_u(i) = Σ_j α_ij v(a_j)`.
//! The prediction MLP then maps `v_u(i) ⊕ z_i` to two logits whose
//! difference is the ranking score.
//!
//! The attention unit's first layer acts on `v(a_j) ⊕ z_i`. Its weight
//! matrix is stored whole, but applied as `v(a_j) W_h + z_i W_z` so the
//! history half is computed once per slate rather than once per candidate.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::features::{embed_slate, EncodedSlate, EncodingConfig, InteractionType, Slate, SlateFeatures, SlateTensors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoding: EncodingConfig,
    pub attention_hidden: usize,
    /// Prediction MLP widths; the last layer must have width 2.
    pub mlp_layers: Vec<usize>,
    pub prelu_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            attention_hidden: 32,
            mlp_layers: vec![200, 80, 2],
            prelu_init: 0.25,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        if self.attention_hidden == 0 {
            return Err(Error::Config("attention_hidden must be positive".into()));
        }
        if self.mlp_layers.last() != Some(&2) || self.mlp_layers.contains(&0) {
            return Err(Error::Config(
                "mlp_layers must be positive and end with width 2".into(),
            ));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let enc = &self.encoding;
        let vocab = &enc.vocabulary;
        let d_in = enc.history_width() + enc.candidate_width();
        let a = self.attention_hidden;
        let mut out = vec![
            ("embedding.sport".to_string(), vec![vocab.sports.len() + 1, enc.sport_dim]),
            ("embedding.format".to_string(), vec![vocab.formats.len() + 1, enc.format_dim]),
            (
                "embedding.interaction".to_string(),
                vec![InteractionType::COUNT, enc.interaction_dim],
            ),
        ];
        if enc.use_positional_encoding {
            out.push(("embedding.delta_t".into(), vec![enc.delta_t_vocab(), enc.delta_t_dim]));
        }
        out.extend([
            ("attention.w1".to_string(), vec![d_in, a]),
            ("attention.b1".to_string(), vec![a]),
            ("attention.prelu".to_string(), vec![a]),
            ("attention.w2".to_string(), vec![a, 1]),
            ("attention.b2".to_string(), vec![1]),
        ]);
        let mut fan_in = d_in;
        let last = self.mlp_layers.len() - 1;
        for (i, &width) in self.mlp_layers.iter().enumerate() {
            out.push((format!("mlp.{i}.weight"), vec![fan_in, width]));
            out.push((format!("mlp.{i}.bias"), vec![width]));
            if i < last {
                out.push((format!("mlp.{i}.prelu"), vec![width]));
            }
            fan_in = width;
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Every learnable tensor of the model, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct DinParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
    pub prelu: Option<Var>,
}

/// Parameters recorded on a graph.
#[derive(Debug, Clone)]
pub struct ParamVars {
    /// One entry per parameter, in storage order.
    pub all: Vec<Var>,
    pub sport: Var,
    pub format: Var,
    pub interaction: Var,
    pub delta_t: Option<Var>,
    pub att_w1: Var,
    pub att_b1: Var,
    pub att_prelu: Var,
    pub att_w2: Var,
    pub att_b2: Var,
    pub mlp: Vec<LayerVars>,
}

impl ParamVars {
    /// Assigns variables, given in [`ModelConfig::parameter_shapes`] order, to their roles.
    pub fn bind(config: &ModelConfig, all: Vec<Var>) -> Result<Self> {
        let names: Vec<String> = config.parameter_shapes().into_iter().map(|(n, _)| n).collect();
        if names.len() != all.len() {
            return Err(Error::Config(format!(
                "expected {} parameter variables, got {}",
                names.len(),
                all.len()
            )));
        }
        let find = |name: &str| names.iter().position(|n| n == name).map(|i| all[i]);
        let req = |name: &str| find(name).ok_or_else(|| Error::Config(format!("missing parameter {name}")));
        let mlp = (0..config.mlp_layers.len())
            .map(|i| {
                Ok(LayerVars {
                    weight: req(&format!("mlp.{i}.weight"))?,
                    bias: req(&format!("mlp.{i}.bias"))?,
                    prelu: find(&format!("mlp.{i}.prelu")),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            sport: req("embedding.sport")?,
            format: req("embedding.format")?,
            interaction: req("embedding.interaction")?,
            delta_t: find("embedding.delta_t"),
            att_w1: req("attention.w1")?,
            att_b1: req("attention.b1")?,
            att_prelu: req("attention.prelu")?,
            att_w2: req("attention.w2")?,
            att_b2: req("attention.b2")?,
            mlp,
            all,
        })
    }
}

impl DinParams {
    /// Glorot-uniform weights, zero biases, constant PReLU slopes.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.parameter_shapes() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("prelu") {
                vec![config.prelu_init; n]
            } else if shape.len() == 1 {
                vec![0.0; n]
            } else {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?.with_grad());
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes against `config`.
    pub fn from_tensors(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != named.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                expected.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(named.len());
        let mut tensors = Vec::with_capacity(named.len());
        for ((want_name, want_shape), (name, t)) in expected.into_iter().zip(named) {
            if want_name != name || want_shape != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} {:?} does not match expected {want_name} {want_shape:?}",
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(if t.requires_grad() { t } else { t.with_grad() });
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// L2 norm of each tensor, formatted `name=norm` for diagnostics.
    pub fn norms_summary(&self) -> String {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| format!("{n}={:.4e}", t.sum_of_squares().sqrt()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Records every parameter on `g` by reference.
    pub fn record<'p>(&'p self, g: &mut Graph<'p>) -> ParamVars {
        let all: Vec<Var> = self.tensors.iter().map(|t| g.param(t)).collect();
        ParamVars::bind(&self.config, all).expect("parameter layout is fixed by ModelConfig")
    }

    /// Attention weights of each candidate row over the history: `m x history_len`.
    pub fn attention_weights(&self, history: &Tensor, mask: &[bool], candidates: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.record(&mut g);
        let h = g.constant(history.clone());
        let z = g.constant(candidates.clone());
        check_widths(&self.config, g.value(h), g.value(z))?;
        let alpha = attention_weights(&mut g, &vars, h, mask, z, &self.config)?;
        Ok(g.value(alpha).clone())
    }

    /// Scores already-encoded slate tensors.
    pub fn score_tensors(&self, enc: &SlateTensors) -> Result<SlateScores> {
        let mut g = Graph::new();
        let vars = self.record(&mut g);
        let encoded = EncodedSlate {
            history: g.constant(enc.history.clone()),
            mask: enc.mask.clone(),
            candidates: g.constant(enc.candidates.clone()),
            labels: enc.labels.data().to_vec(),
        };
        let out = forward(&mut g, &vars, &encoded, &self.config)?;
        Ok(SlateScores {
            scores: g.value(out.scores).clone(),
            attention: g.value(out.attention).clone(),
        })
    }

    pub fn score_features(&self, features: &SlateFeatures) -> Result<SlateScores> {
        let mut g = Graph::new();
        let vars = self.record(&mut g);
        let enc = embed_slate(&mut g, &vars, features, &self.config.encoding)?;
        let out = forward(&mut g, &vars, &enc, &self.config)?;
        Ok(SlateScores {
            scores: g.value(out.scores).clone(),
            attention: g.value(out.attention).clone(),
        })
    }

    pub fn score_slate(&self, slate: &Slate) -> Result<SlateScores> {
        self.score_features(&SlateFeatures::new(slate, &self.config.encoding)?)
    }
}

/// Output of scoring one slate.
#[derive(Debug, Clone, PartialEq)]
pub struct SlateScores {
    /// One score per candidate; higher ranks first.
    pub scores: Tensor,
    /// `m x history_len`; all-zero rows on cold start.
    pub attention: Tensor,
}

/// Graph handles produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct ScoreVars {
    /// `[m]`
    pub scores: Var,
    /// `m x 2`, ordered `[positive, negative]`.
    pub logits: Var,
    /// `m x history_len`
    pub attention: Var,
}

fn check_widths(cfg: &ModelConfig, history: &Tensor, candidates: &Tensor) -> Result<()> {
    let d_h = cfg.encoding.history_width();
    let d_z = cfg.encoding.candidate_width();
    if history.rank() != 2 || history.cols() != d_h || candidates.rank() != 2 || candidates.cols() != d_z {
        return Err(Error::Config(format!(
            "encoded shapes {:?} / {:?} do not match model widths d_h={d_h}, d_z={d_z}",
            history.shape(),
            candidates.shape()
        )));
    }
    Ok(())
}

/// Masked-softmax attention of every candidate over the history.
pub fn attention_weights(
    g: &mut Graph<'_>,
    vars: &ParamVars,
    history: Var,
    mask: &[bool],
    candidates: Var,
    cfg: &ModelConfig,
) -> Result<Var> {
    let d_h = cfg.encoding.history_width();
    let d_z = cfg.encoding.candidate_width();
    let m = g.value(candidates).rows();
    let h = g.value(history).rows();
    let w_hist = g.slice_rows(vars.att_w1, 0, d_h)?;
    let w_cand = g.slice_rows(vars.att_w1, d_h, d_h + d_z)?;
    let hist_proj = g.matmul(history, w_hist)?;
    let cand_proj = g.matmul(candidates, w_cand)?;
    let pre = g.pairwise_add(cand_proj, hist_proj)?;
    let pre = g.add_bias(pre, vars.att_b1)?;
    let act = g.prelu(pre, vars.att_prelu)?;
    let logits = g.matmul(act, vars.att_w2)?;
    let logits = g.add_bias(logits, vars.att_b2)?;
    let logits = g.reshape(logits, vec![m, h])?;
    g.masked_softmax(logits, mask)
}

/// `v_u(i) = Σ_j α_ij v(a_j)` for every candidate row of `alpha`.
pub fn interest_vectors(g: &mut Graph<'_>, history: Var, alpha: Var) -> Result<Var> {
    g.matmul(alpha, history)
}

/// Scores every candidate of an encoded slate.
pub fn forward(g: &mut Graph<'_>, vars: &ParamVars, enc: &EncodedSlate, cfg: &ModelConfig) -> Result<ScoreVars> {
    check_widths(cfg, g.value(enc.history), g.value(enc.candidates))?;
    let m = g.value(enc.candidates).rows();
    let h_max = g.value(enc.history).rows();
    if enc.mask.len() != h_max {
        return Err(Error::Config(format!(
            "mask length {} does not match history rows {h_max}",
            enc.mask.len()
        )));
    }
    let (interest, attention) = if enc.mask.iter().any(|&b| b) {
        let alpha = attention_weights(g, vars, enc.history, &enc.mask, enc.candidates, cfg)?;
        (interest_vectors(g, enc.history, alpha)?, alpha)
    } else {
        // Cold start: no history, so the interest vector is zero.
        let d_h = cfg.encoding.history_width();
        (
            g.constant(Tensor::zeros(vec![m, d_h])),
            g.constant(Tensor::zeros(vec![m, h_max])),
        )
    };
    let mut x = g.concat(interest, enc.candidates)?;
    for layer in &vars.mlp {
        x = g.matmul(x, layer.weight)?;
        x = g.add_bias(x, layer.bias)?;
        if let Some(slope) = layer.prelu {
            x = g.prelu(x, slope)?;
        }
    }
    let logits = x;
    let diff = g.constant(Tensor::matrix(2, 1, vec![1.0, -1.0])?);
    let scores = g.matmul(logits, diff)?;
    let scores = g.reshape(scores, vec![m])?;
    Ok(ScoreVars {
        scores,
        logits,
        attention,
    })
}

const CHECKPOINT_FORMAT: &str = "deadline-rank-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    parameters: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DinParams {
    /// JSON checkpoint: a header with the model and encoding configuration,
    /// then each parameter's name, shape and row-major values. Floats are
    /// written in shortest round-trip form, so reloading is bit-exact.
    pub fn to_checkpoint_string(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            parameters: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| NamedTensor {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_checkpoint_str(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let named = file
            .parameters
            .into_iter()
            .map(|p| Ok((p.name, Tensor::new(p.shape, p.values)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_tensors(&file.config, named)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path)?)
    }
}
