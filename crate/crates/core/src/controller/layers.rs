//! Differentiable building blocks with explicit forward caches.
//!
//! Every `backward` accumulates into the owning `ParamTensor` gradients and
//! returns the gradient with respect to the block input.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkit::{Matrix, ParamTensor, RngStream};

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut RngStream) -> Matrix {
    if bound == 0.0 {
        return Matrix::zeros(rows, cols);
    }
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamTensor,
    pub bias: Option<ParamTensor>,
}

impl Linear {
    pub fn new(name: &str, fan_in: usize, fan_out: usize, bias: bool, scale: f64, rng: &mut RngStream) -> Self {
        let bound = scale / (fan_in as f64).sqrt();
        Linear {
            weight: ParamTensor::new(format!("{name}.w"), uniform_matrix(fan_in, fan_out, bound, rng)),
            bias: bias.then(|| ParamTensor::zeros(format!("{name}.b"), 1, fan_out)),
        }
    }

    pub fn zeros(name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        Linear {
            weight: ParamTensor::zeros(format!("{name}.w"), fan_in, fan_out),
            bias: bias.then(|| ParamTensor::zeros(format!("{name}.b"), 1, fan_out)),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let y = x.matmul(&self.weight.value)?;
        match &self.bias {
            Some(b) => y.add_row_broadcast(&b.value),
            None => Ok(y),
        }
    }

    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Result<Matrix> {
        self.weight.accumulate(&x.t_matmul(dy)?);
        if let Some(b) = &mut self.bias {
            b.accumulate(&dy.sum_rows());
        }
        dy.matmul_t(&self.weight.value)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }
}

/// Row-wise layer normalization with learned scale and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: ParamTensor::new(format!("{name}.gamma"), Matrix::filled(1, dim, 1.0)),
            beta: ParamTensor::zeros(format!("{name}.beta"), 1, dim),
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let (n, d) = x.shape();
        let mut normalized = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let xh = (row[c] - mean) * is;
                normalized[(r, c)] = xh;
                out[(r, c)] = xh * self.gamma.value[(0, c)] + self.beta.value[(0, c)];
            }
        }
        (out, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Matrix) -> Matrix {
        let (n, d) = dy.shape();
        let mut dgamma = Matrix::zeros(1, d);
        let mut dbeta = Matrix::zeros(1, d);
        let mut dx = Matrix::zeros(n, d);
        for r in 0..n {
            let xh = cache.normalized.row(r);
            let g = dy.row(r);
            let mut dxh = vec![0.0; d];
            for c in 0..d {
                dgamma[(0, c)] += g[c] * xh[c];
                dbeta[(0, c)] += g[c];
                dxh[c] = g[c] * self.gamma.value[(0, c)];
            }
            let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
            let mean_dxh_xh = dxh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            for c in 0..d {
                dx[(r, c)] = cache.inv_std[r] * (dxh[c] - mean_dxh - xh[c] * mean_dxh_xh);
            }
        }
        self.gamma.accumulate(&dgamma);
        self.beta.accumulate(&dbeta);
        dx
    }
}

/// Scaled dot-product attention: `softmax(q kᵀ / √d_k) v`.
///
/// ```
/// use synsel::controller::self_attention;
/// use synsel::numkit::Matrix;
/// let q = Matrix::zeros(2, 2);
/// let k = Matrix::identity(2);
/// let v = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
/// // zero queries attend uniformly, so each row is the column mean of v
/// let out = self_attention(&q, &k, &v, 2).unwrap();
/// assert_eq!(out.row(0), &[0.5, 1.5]);
/// ```
pub fn self_attention(q: &Matrix, k: &Matrix, v: &Matrix, key_dim: usize) -> Result<Matrix> {
    Ok(attention_weights(q, k, v, key_dim)?.1)
}

/// Attention weights and output.
pub(crate) fn attention_weights(q: &Matrix, k: &Matrix, v: &Matrix, key_dim: usize) -> Result<(Matrix, Matrix)> {
    if q.cols() != key_dim || k.cols() != key_dim {
        return Err(Error::dim("self_attention q/k", q.shape(), k.shape()));
    }
    if k.rows() != v.rows() {
        return Err(Error::dim("self_attention k/v", k.shape(), v.shape()));
    }
    let scale = 1.0 / (key_dim as f64).sqrt();
    let weights = q.matmul_t(k)?.scale(scale).softmax_rows();
    let out = weights.matmul(v)?;
    Ok((weights, out))
}

/// Gradients of attention output with respect to `q`, `k`, `v`.
pub(crate) fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    weights: &Matrix,
    key_dim: usize,
    dout: &Matrix,
) -> Result<(Matrix, Matrix, Matrix)> {
    let scale = 1.0 / (key_dim as f64).sqrt();
    let dv = weights.t_matmul(dout)?;
    let dweights = dout.matmul_t(v)?;
    let mut dscores = Matrix::zeros(weights.rows(), weights.cols());
    for r in 0..weights.rows() {
        let p = weights.row(r);
        let dp = dweights.row(r);
        let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for c in 0..weights.cols() {
            dscores[(r, c)] = p[c] * (dp[c] - inner) * scale;
        }
    }
    let dq = dscores.matmul(k)?;
    let dk = dscores.t_matmul(q)?;
    Ok((dq, dk, dv))
}

/// One attention head's projections.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

/// Multi-head self-attention: heads concatenated, then projected by `W^O`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHead {
    pub heads: Vec<AttentionHead>,
    pub output: Linear,
    pub key_dim: usize,
    pub value_dim: usize,
}

#[derive(Debug, Clone)]
pub struct MultiHeadCache {
    input: Matrix,
    q: Vec<Matrix>,
    k: Vec<Matrix>,
    v: Vec<Matrix>,
    pub(crate) weights: Vec<Matrix>,
    concat: Matrix,
}

impl MultiHead {
    pub fn new(name: &str, model_dim: usize, heads: usize, key_dim: usize, value_dim: usize, scale: f64, rng: &mut RngStream) -> Self {
        let heads = (0..heads)
            .map(|h| AttentionHead {
                query: Linear::new(&format!("{name}.head{h}.query"), model_dim, key_dim, false, scale, rng),
                key: Linear::new(&format!("{name}.head{h}.key"), model_dim, key_dim, false, scale, rng),
                value: Linear::new(&format!("{name}.head{h}.value"), model_dim, value_dim, false, scale, rng),
            })
            .collect::<Vec<_>>();
        let output = Linear::new(&format!("{name}.output"), heads.len() * value_dim, model_dim, false, scale, rng);
        MultiHead { heads, output, key_dim, value_dim }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MultiHeadCache)> {
        let n = x.rows();
        let mut cache = MultiHeadCache {
            input: x.clone(),
            q: Vec::new(),
            k: Vec::new(),
            v: Vec::new(),
            weights: Vec::new(),
            concat: Matrix::zeros(n, self.heads.len() * self.value_dim),
        };
        for (h, head) in self.heads.iter().enumerate() {
            let q = head.query.forward(x)?;
            let k = head.key.forward(x)?;
            let v = head.value.forward(x)?;
            let (w, out) = attention_weights(&q, &k, &v, self.key_dim)?;
            cache.concat.set_column_block(h * self.value_dim, &out);
            cache.q.push(q);
            cache.k.push(k);
            cache.v.push(v);
            cache.weights.push(w);
        }
        let out = self.output.forward(&cache.concat)?;
        Ok((out, cache))
    }

    pub fn backward(&mut self, cache: &MultiHeadCache, dout: &Matrix) -> Result<Matrix> {
        let dconcat = self.output.backward(&cache.concat, dout)?;
        let mut dx = Matrix::zeros(cache.input.rows(), cache.input.cols());
        for (h, head) in self.heads.iter_mut().enumerate() {
            let dhead = dconcat.column_block(h * self.value_dim, self.value_dim);
            let (dq, dk, dv) = attention_backward(
                &cache.q[h],
                &cache.k[h],
                &cache.v[h],
                &cache.weights[h],
                self.key_dim,
                &dhead,
            )?;
            dx.add_assign(&head.query.backward(&cache.input, &dq)?)?;
            dx.add_assign(&head.key.backward(&cache.input, &dk)?)?;
            dx.add_assign(&head.value.backward(&cache.input, &dv)?)?;
        }
        Ok(dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = Vec::new();
        for h in &mut self.heads {
            v.extend(h.query.params_mut());
            v.extend(h.key.params_mut());
            v.extend(h.value.params_mut());
        }
        v.extend(self.output.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = Vec::new();
        for h in &self.heads {
            v.extend(h.query.params());
            v.extend(h.key.params());
            v.extend(h.value.params());
        }
        v.extend(self.output.params());
        v
    }
}

/// Position-wise `max(0, x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
}

impl FeedForward {
    pub fn new(name: &str, dim: usize, hidden: usize, scale: f64, rng: &mut RngStream) -> Self {
        FeedForward {
            inner: Linear::new(&format!("{name}.inner"), dim, hidden, true, scale, rng),
            outer: Linear::new(&format!("{name}.outer"), hidden, dim, true, scale, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, FeedForwardCache)> {
        let pre = self.inner.forward(x)?;
        let hidden = pre.relu();
        let out = self.outer.forward(&hidden)?;
        Ok((out, FeedForwardCache { input: x.clone(), pre, hidden }))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache, dout: &Matrix) -> Result<Matrix> {
        let dhidden = self.outer.backward(&cache.hidden, dout)?;
        let mut dpre = dhidden;
        for (g, &p) in dpre.data_mut().iter_mut().zip(cache.pre.data()) {
            if p <= 0.0 {
                *g = 0.0;
            }
        }
        self.inner.backward(&cache.input, &dpre)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.inner.params_mut();
        v.extend(self.outer.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.inner.params();
        v.extend(self.outer.params());
        v
    }
}

/// Position-wise feed-forward with explicit weights.
pub fn feed_forward(x: &Matrix, w1: &Matrix, b1: &Matrix, w2: &Matrix, b2: &Matrix) -> Result<Matrix> {
    x.matmul(w1)?
        .add_row_broadcast(b1)?
        .relu()
        .matmul(w2)?
        .add_row_broadcast(b2)
}

/// Multi-head attention with explicit per-head weights.
pub fn multi_head(
    x: &Matrix,
    heads: &[(Matrix, Matrix, Matrix)],
    output: &Matrix,
) -> Result<Matrix> {
    let mut parts = Vec::with_capacity(heads.len());
    for (wq, wk, wv) in heads {
        let q = x.matmul(wq)?;
        let k = x.matmul(wk)?;
        let v = x.matmul(wv)?;
        parts.push(self_attention(&q, &k, &v, wq.cols())?);
    }
    let width: usize = parts.iter().map(Matrix::cols).sum();
    let mut concat = Matrix::zeros(x.rows(), width);
    let mut at = 0;
    for p in &parts {
        concat.set_column_block(at, p);
        at += p.cols();
    }
    concat.matmul(output)
}

/// Sinusoidal position table: `sin(pos / 10000^(2i/dim))` on even columns,
/// `cos` on odd ones.
pub fn positional_encoding(length: usize, dim: usize) -> Result<Matrix> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!("positional encoding dimension {dim} must be even")));
    }
    Ok(Matrix::from_fn(length, dim, |pos, col| {
        let i = (col / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
        if col % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}
