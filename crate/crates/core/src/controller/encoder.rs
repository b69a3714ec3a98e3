use super::layers::{positional_encoding, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, MultiHead, MultiHeadCache};
use super::{ControllerConfig, ForwardCache, Heads, InputEmbedding, PolicyOutput};
use crate::error::Result;
use crate::numkit::{Matrix, ParamTensor, RngStream};

/// One post-norm encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHead,
    pub attention_norm: Option<LayerNorm>,
    pub feed_forward: FeedForward,
    pub feed_forward_norm: Option<LayerNorm>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    attention: MultiHeadCache,
    attention_norm: Option<LayerNormCache>,
    feed_forward: FeedForwardCache,
    feed_forward_norm: Option<LayerNormCache>,
}

impl EncoderLayer {
    fn forward(&self, x: &Matrix) -> Result<(Matrix, LayerCache)> {
        let (a, attention) = self.attention.forward(x)?;
        let residual = x.add(&a)?;
        let (h, attention_norm) = match &self.attention_norm {
            Some(n) => {
                let (y, c) = n.forward(&residual);
                (y, Some(c))
            }
            None => (residual, None),
        };
        let (f, feed_forward) = self.feed_forward.forward(&h)?;
        let residual = h.add(&f)?;
        let (out, feed_forward_norm) = match &self.feed_forward_norm {
            Some(n) => {
                let (y, c) = n.forward(&residual);
                (y, Some(c))
            }
            None => (residual, None),
        };
        Ok((
            out,
            LayerCache {
                attention,
                attention_norm,
                feed_forward,
                feed_forward_norm,
            },
        ))
    }

    fn backward(&mut self, cache: &LayerCache, dout: &Matrix) -> Result<Matrix> {
        let dresidual = match (&mut self.feed_forward_norm, &cache.feed_forward_norm) {
            (Some(n), Some(c)) => n.backward(c, dout),
            _ => dout.clone(),
        };
        let mut dh = self.feed_forward.backward(&cache.feed_forward, &dresidual)?;
        dh.add_assign(&dresidual)?;
        let dresidual = match (&mut self.attention_norm, &cache.attention_norm) {
            (Some(n), Some(c)) => n.backward(c, &dh),
            _ => dh,
        };
        let mut dx = self.attention.backward(&cache.attention, &dresidual)?;
        dx.add_assign(&dresidual)?;
        Ok(dx)
    }

    fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.attention.params();
        if let Some(n) = &self.attention_norm {
            v.extend([&n.gamma, &n.beta]);
        }
        v.extend(self.feed_forward.params());
        if let Some(n) = &self.feed_forward_norm {
            v.extend([&n.gamma, &n.beta]);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.attention.params_mut();
        if let Some(n) = &mut self.attention_norm {
            v.extend([&mut n.gamma, &mut n.beta]);
        }
        v.extend(self.feed_forward.params_mut());
        if let Some(n) = &mut self.feed_forward_norm {
            v.extend([&mut n.gamma, &mut n.beta]);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub embedding: InputEmbedding,
    pub layers: Vec<EncoderLayer>,
    pub heads: Heads,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    input: Matrix,
    classes: Vec<usize>,
    layers: Vec<LayerCache>,
    hidden: Matrix,
    pooled: Matrix,
}

impl EncoderCache {
    pub fn attention_weights(&self, layer: usize, head: usize) -> Option<&Matrix> {
        self.layers.get(layer)?.attention.weights.get(head)
    }

    /// Final hidden states, one row per position.
    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }
}

impl TransformerParams {
    pub fn new(cfg: &ControllerConfig, rng: &mut RngStream) -> Self {
        let embedding = InputEmbedding::new(cfg, rng);
        let layers = (0..cfg.layers)
            .map(|l| EncoderLayer {
                attention: MultiHead::new(
                    &format!("layer{l}.attention"),
                    cfg.model_dim,
                    cfg.heads,
                    cfg.key_dim,
                    cfg.value_dim,
                    cfg.init_scale,
                    rng,
                ),
                attention_norm: cfg.layer_norm.then(|| LayerNorm::new(&format!("layer{l}.attention_norm"), cfg.model_dim)),
                feed_forward: FeedForward::new(&format!("layer{l}.ffn"), cfg.model_dim, cfg.ffn_hidden, cfg.init_scale, rng),
                feed_forward_norm: cfg.layer_norm.then(|| LayerNorm::new(&format!("layer{l}.ffn_norm"), cfg.model_dim)),
            })
            .collect();
        let heads = Heads::new(cfg, rng);
        TransformerParams { embedding, layers, heads }
    }

    pub(super) fn backward(&mut self, cache: &EncoderCache, dlogits: &Matrix, dvalue: f64) -> Result<()> {
        let n = cache.hidden.rows();
        let mut dh = self.heads.policy.backward(&cache.hidden, dlogits)?;
        let dpooled = self.heads.value.backward(&cache.pooled, &Matrix::row_vector(&[dvalue]))?;
        for r in 0..n {
            for (g, &p) in dh.row_mut(r).iter_mut().zip(dpooled.data()) {
                *g += p / n as f64;
            }
        }
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            dh = layer.backward(c, &dh)?;
        }
        self.embedding.backward(&cache.input, &cache.classes, &dh)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.embedding.params();
        for l in &self.layers {
            v.extend(l.params());
        }
        v.extend(self.heads.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.embedding.params_mut();
        for l in &mut self.layers {
            v.extend(l.params_mut());
        }
        v.extend(self.heads.params_mut());
        v
    }
}

/// Runs the transformer controller over one candidate sequence.
pub fn encoder_forward(
    params: &TransformerParams,
    sequence: &Matrix,
    classes: &[usize],
    use_positions: bool,
) -> Result<PolicyOutput> {
    let mut h = params.embedding.forward(sequence, classes)?;
    if use_positions {
        h.add_assign(&positional_encoding(h.rows(), h.cols())?)?;
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (out, c) = layer.forward(&h)?;
        layers.push(c);
        h = out;
    }
    let logits = params.heads.policy.forward(&h)?;
    let pooled = h.mean_rows();
    let value = params.heads.value.forward(&pooled)?[(0, 0)];
    logits.ensure_finite("controller logits")?;
    Ok(PolicyOutput {
        logits,
        value,
        cache: ForwardCache::Transformer(EncoderCache {
            input: sequence.clone(),
            classes: classes.to_vec(),
            layers,
            hidden: h,
            pooled,
        }),
    })
}
