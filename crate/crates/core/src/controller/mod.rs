//! Policy networks that map a sequence of candidate features to per-candidate
//! keep/discard logits plus a scalar state value.
//!
//! The default controller is a transformer encoder: inputs are projected to
//! the model width, a learned class embedding and (optionally) sinusoidal
//! positions are added, and `layers` post-norm encoder blocks follow. Each
//! block applies multi-head self-attention and a ReLU feed-forward network,
//! both wrapped in a residual connection and layer normalization. A linear
//! head produces two logits per position; the state value is a linear
//! function of the mean-pooled final hidden states.
//!
//! Two recurrent ablations share the same front end and heads: a GRU scan and
//! a GRU with additive attention pooling feeding the value head.

mod checkpoint;
mod encoder;
pub(crate) mod gru;
pub(crate) mod layers;
mod sampling;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use encoder::{encoder_forward, EncoderLayer, TransformerParams};
pub use gru::{gru_forward, GruCell, GruParams};
pub use layers::{
    feed_forward, multi_head, positional_encoding, self_attention, FeedForward, LayerNorm, Linear,
    MultiHead,
};
pub use sampling::{entropy_gradient, log_prob_gradient, sample_actions, ActionSample, SampleMode};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, ParamTensor, Parameterized, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Transformer,
    Gru,
    GruAttn,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Transformer => "transformer",
            Variant::Gru => "gru",
            Variant::GruAttn => "gru-attn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Variant::Transformer),
            "gru" => Ok(Variant::Gru),
            "gru-attn" => Ok(Variant::GruAttn),
            other => Err(Error::Config(format!("unknown controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub variant: Variant,
    /// Candidate feature dimension.
    pub input_dim: usize,
    pub class_count: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    /// Width of the additive attention used by the GRU-attention variant.
    pub attention_dim: usize,
    /// Multiplier on the `±1/√fan_in` uniform initialization bound.
    pub init_scale: f64,
    pub use_positions: bool,
    pub layer_norm: bool,
    /// Start the policy head at zero so every candidate begins at p = 0.5.
    pub zero_policy_head: bool,
    /// Feed one class per controller sequence instead of mixed batches.
    pub per_class_sequences: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            variant: Variant::Transformer,
            input_dim: 16,
            class_count: 4,
            model_dim: 64,
            heads: 2,
            key_dim: 32,
            value_dim: 32,
            layers: 2,
            ffn_hidden: 128,
            attention_dim: 32,
            init_scale: 1.0,
            use_positions: true,
            layer_norm: true,
            zero_policy_head: true,
            per_class_sequences: false,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 || self.class_count == 0 || self.model_dim == 0 {
            return fail("controller dimensions must be positive".into());
        }
        if self.variant == Variant::Transformer {
            if self.layers == 0 || self.heads == 0 {
                return fail("transformer needs at least one layer and one head".into());
            }
            if self.model_dim != self.heads * self.value_dim {
                return fail(format!(
                    "model_dim {} must equal heads {} x value_dim {}",
                    self.model_dim, self.heads, self.value_dim
                ));
            }
            if self.key_dim == 0 || self.ffn_hidden == 0 {
                return fail("key_dim and ffn_hidden must be positive".into());
            }
            if self.use_positions && self.model_dim % 2 != 0 {
                return fail("positional encoding needs an even model_dim".into());
            }
        }
        if self.variant == Variant::GruAttn && self.attention_dim == 0 {
            return fail("attention_dim must be positive".into());
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return fail("init_scale must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Projection and class embedding shared by every variant.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEmbedding {
    pub projection: Linear,
    pub classes: ParamTensor,
}

impl InputEmbedding {
    fn new(cfg: &ControllerConfig, rng: &mut RngStream) -> Self {
        let bound = cfg.init_scale / (cfg.model_dim as f64).sqrt();
        InputEmbedding {
            projection: Linear::new("input", cfg.input_dim, cfg.model_dim, true, cfg.init_scale, rng),
            classes: ParamTensor::new(
                "class_embedding",
                layers::uniform_matrix(cfg.class_count, cfg.model_dim, bound, rng),
            ),
        }
    }

    fn forward(&self, x: &Matrix, classes: &[usize]) -> Result<Matrix> {
        if x.rows() != classes.len() {
            return Err(Error::dim("controller input", x.shape(), (classes.len(), 1)));
        }
        let k = self.classes.value.rows();
        if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
            return Err(Error::Validation(format!("class id {bad} not below {k}")));
        }
        let mut h = self.projection.forward(x)?;
        for (r, &c) in classes.iter().enumerate() {
            for (o, &e) in h.row_mut(r).iter_mut().zip(self.classes.value.row(c)) {
                *o += e;
            }
        }
        Ok(h)
    }

    fn backward(&mut self, x: &Matrix, classes: &[usize], dh: &Matrix) -> Result<()> {
        self.projection.backward(x, dh)?;
        let mut de = Matrix::zeros(self.classes.value.rows(), self.classes.value.cols());
        for (r, &c) in classes.iter().enumerate() {
            for (o, &g) in de.row_mut(c).iter_mut().zip(dh.row(r)) {
                *o += g;
            }
        }
        self.classes.accumulate(&de);
        Ok(())
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.projection.params();
        v.push(&self.classes);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.projection.params_mut();
        v.push(&mut self.classes);
        v
    }
}

/// Policy and value heads shared by every variant.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub policy: Linear,
    pub value: Linear,
}

impl Heads {
    fn new(cfg: &ControllerConfig, rng: &mut RngStream) -> Self {
        let policy = if cfg.zero_policy_head {
            Linear::zeros("policy", cfg.model_dim, 2, true)
        } else {
            Linear::new("policy", cfg.model_dim, 2, true, cfg.init_scale, rng)
        };
        Heads {
            policy,
            value: Linear::new("value", cfg.model_dim, 1, true, cfg.init_scale, rng),
        }
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.policy.params();
        v.extend(self.value.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.policy.params_mut();
        v.extend(self.value.params_mut());
        v
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Transformer(encoder::EncoderCache),
    Gru(gru::GruCache),
}

/// Result of one controller forward pass.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    /// `sequence length × 2`; column 0 is discard, column 1 is keep.
    pub logits: Matrix,
    pub value: f64,
    pub cache: ForwardCache,
}

impl PolicyOutput {
    /// Attention weights of one encoder layer and head, if the output came
    /// from the transformer.
    pub fn attention_weights(&self, layer: usize, head: usize) -> Option<&Matrix> {
        match &self.cache {
            ForwardCache::Transformer(c) => c.attention_weights(layer, head),
            ForwardCache::Gru(c) => (layer == 0 && head == 0).then(|| c.pooling_weights()).flatten(),
        }
    }

    pub fn len(&self) -> usize {
        self.logits.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Transformer(TransformerParams),
    Gru(GruParams),
}

/// A controller: architecture configuration plus all learnable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub config: ControllerConfig,
    pub network: Network,
}

impl Controller {
    pub fn new(config: ControllerConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let network = match config.variant {
            Variant::Transformer => Network::Transformer(TransformerParams::new(&config, rng)),
            Variant::Gru | Variant::GruAttn => Network::Gru(GruParams::new(&config, rng)),
        };
        Ok(Controller { config, network })
    }

    pub fn forward(&self, sequence: &Matrix, classes: &[usize]) -> Result<PolicyOutput> {
        if sequence.rows() == 0 {
            return Err(Error::Validation("controller input sequence is empty".into()));
        }
        if sequence.cols() != self.config.input_dim {
            return Err(Error::dim(
                "controller input",
                sequence.shape(),
                (sequence.rows(), self.config.input_dim),
            ));
        }
        match &self.network {
            Network::Transformer(p) => encoder_forward(p, sequence, classes, self.config.use_positions),
            Network::Gru(p) => gru_forward(p, sequence, classes, self.config.variant == Variant::GruAttn),
        }
    }

    /// Sets the value-head bias, e.g. to a known reward level.
    pub fn set_value_bias(&mut self, value: f64) {
        let heads = match &mut self.network {
            Network::Transformer(p) => &mut p.heads,
            Network::Gru(p) => &mut p.heads,
        };
        if let Some(b) = heads.value.bias.as_mut() {
            b.value[(0, 0)] = value;
        }
    }

    /// Accumulates parameter gradients given `∂L/∂logits` and `∂L/∂value`.
    pub fn backward(&mut self, out: &PolicyOutput, dlogits: &Matrix, dvalue: f64) -> Result<()> {
        if dlogits.shape() != out.logits.shape() {
            return Err(Error::dim("controller backward", out.logits.shape(), dlogits.shape()));
        }
        match (&mut self.network, &out.cache) {
            (Network::Transformer(p), ForwardCache::Transformer(c)) => p.backward(c, dlogits, dvalue),
            (Network::Gru(p), ForwardCache::Gru(c)) => p.backward(c, dlogits, dvalue),
            _ => Err(Error::State("forward cache does not match controller variant".into())),
        }
    }
}

impl Parameterized for Controller {
    fn params(&self) -> Vec<&ParamTensor> {
        match &self.network {
            Network::Transformer(p) => p.params(),
            Network::Gru(p) => p.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match &mut self.network {
            Network::Transformer(p) => p.params_mut(),
            Network::Gru(p) => p.params_mut(),
        }
    }
}

#[cfg(test)]
mod tests;
