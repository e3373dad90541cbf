//! The full scorer plus listwise loss as one scalar function of every parameter.

use deadline_rank::autodiff::{Graph, Tensor, Var};
use deadline_rank::features::{embed_slate, Slate, SlateFeatures};
use deadline_rank::loss::{neural_ndcg_loss, pointwise_loss, NeuralNdcgConfig};
use deadline_rank::model::{forward, DinParams, ModelConfig, ParamVars};

pub struct Composite {
    pub names: Vec<String>,
    pub inputs: Vec<Tensor>,
    pub config: ModelConfig,
    pub features: SlateFeatures,
}

impl Composite {
    pub fn new(config: ModelConfig, slate: &Slate, seed: u64) -> Self {
        let params = DinParams::init(&config, seed).unwrap();
        let features = SlateFeatures::new(slate, &config.encoding).unwrap();
        Self {
            names: params.names().to_vec(),
            inputs: params.tensors().to_vec(),
            config,
            features,
        }
    }

    pub fn listwise(&self) -> impl for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var + '_ {
        move |g, vars| {
            let pv = ParamVars::bind(&self.config, vars.to_vec()).unwrap();
            let enc = embed_slate(g, &pv, &self.features, &self.config.encoding).unwrap();
            let out = forward(g, &pv, &enc, &self.config).unwrap();
            neural_ndcg_loss(g, out.scores, &self.features.labels, &NeuralNdcgConfig::default()).unwrap()
        }
    }

    pub fn pointwise(&self) -> impl for<'g> Fn(&mut Graph<'g>, &[Var]) -> Var + '_ {
        move |g, vars| {
            let pv = ParamVars::bind(&self.config, vars.to_vec()).unwrap();
            let enc = embed_slate(g, &pv, &self.features, &self.config.encoding).unwrap();
            let out = forward(g, &pv, &enc, &self.config).unwrap();
            pointwise_loss(g, out.logits, &self.features.labels).unwrap()
        }
    }
}
