use super::layers::Linear;
use super::{ControllerConfig, ForwardCache, Heads, InputEmbedding, PolicyOutput};
use crate::error::Result;
use crate::numkit::{Matrix, ParamTensor, RngStream};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x Wz + h Uz + bz)          update gate
/// r  = σ(x Wr + h Ur + br)          reset gate
/// n  = tanh(x Wn + (r ⊙ h) Un + bn)
/// h' = (1 - z) ⊙ h + z ⊙ n
/// ```
///
/// A closed update gate (z ≈ 0) carries the previous state through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub update_input: Linear,
    pub update_hidden: Linear,
    pub reset_input: Linear,
    pub reset_hidden: Linear,
    pub candidate_input: Linear,
    pub candidate_hidden: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Matrix,
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    n: Matrix,
    reset_h: Matrix,
}

impl GruCell {
    pub fn new(name: &str, input: usize, hidden: usize, scale: f64, rng: &mut RngStream) -> Self {
        // input-side linears carry the biases
        GruCell {
            update_input: Linear::new(&format!("{name}.update_x"), input, hidden, true, scale, rng),
            update_hidden: Linear::new(&format!("{name}.update_h"), hidden, hidden, false, scale, rng),
            reset_input: Linear::new(&format!("{name}.reset_x"), input, hidden, true, scale, rng),
            reset_hidden: Linear::new(&format!("{name}.reset_h"), hidden, hidden, false, scale, rng),
            candidate_input: Linear::new(&format!("{name}.cand_x"), input, hidden, true, scale, rng),
            candidate_hidden: Linear::new(&format!("{name}.cand_h"), hidden, hidden, false, scale, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.update_hidden.weight.value.rows()
    }

    /// One step; `x` and `h` are single rows.
    pub fn step(&self, x: &Matrix, h: &Matrix) -> Result<Matrix> {
        Ok(self.step_cached(x, h)?.0)
    }

    pub(crate) fn step_cached(&self, x: &Matrix, h: &Matrix) -> Result<(Matrix, StepCache)> {
        let z = self.update_input.forward(x)?.add(&self.update_hidden.forward(h)?)?.map(sigmoid);
        let r = self.reset_input.forward(x)?.add(&self.reset_hidden.forward(h)?)?.map(sigmoid);
        let reset_h = r.hadamard(h)?;
        let n = self
            .candidate_input
            .forward(x)?
            .add(&self.candidate_hidden.forward(&reset_h)?)?
            .map(f64::tanh);
        let mut out = h.clone();
        for i in 0..out.cols() {
            out[(0, i)] = (1.0 - z[(0, i)]) * h[(0, i)] + z[(0, i)] * n[(0, i)];
        }
        Ok((
            out,
            StepCache {
                x: x.clone(),
                h_prev: h.clone(),
                z,
                r,
                n,
                reset_h,
            },
        ))
    }

    /// Returns `(∂L/∂x, ∂L/∂h_prev)`.
    pub(crate) fn step_backward(&mut self, c: &StepCache, dh: &Matrix) -> Result<(Matrix, Matrix)> {
        let width = dh.cols();
        let mut dz_pre = Matrix::zeros(1, width);
        let mut dn_pre = Matrix::zeros(1, width);
        let mut dh_prev = Matrix::zeros(1, width);
        for i in 0..width {
            let (z, n, hp, g) = (c.z[(0, i)], c.n[(0, i)], c.h_prev[(0, i)], dh[(0, i)]);
            dh_prev[(0, i)] = g * (1.0 - z);
            dz_pre[(0, i)] = g * (n - hp) * z * (1.0 - z);
            dn_pre[(0, i)] = g * z * (1.0 - n * n);
        }
        let mut dx = self.candidate_input.backward(&c.x, &dn_pre)?;
        let dreset_h = self.candidate_hidden.backward(&c.reset_h, &dn_pre)?;
        let mut dr_pre = Matrix::zeros(1, width);
        for i in 0..width {
            let r = c.r[(0, i)];
            dr_pre[(0, i)] = dreset_h[(0, i)] * c.h_prev[(0, i)] * r * (1.0 - r);
            dh_prev[(0, i)] += dreset_h[(0, i)] * r;
        }
        dx.add_assign(&self.update_input.backward(&c.x, &dz_pre)?)?;
        dh_prev.add_assign(&self.update_hidden.backward(&c.h_prev, &dz_pre)?)?;
        dx.add_assign(&self.reset_input.backward(&c.x, &dr_pre)?)?;
        dh_prev.add_assign(&self.reset_hidden.backward(&c.h_prev, &dr_pre)?)?;
        Ok((dx, dh_prev))
    }

    fn linears(&self) -> [&Linear; 6] {
        [
            &self.update_input,
            &self.update_hidden,
            &self.reset_input,
            &self.reset_hidden,
            &self.candidate_input,
            &self.candidate_hidden,
        ]
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.linears().into_iter().flat_map(Linear::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.update_input.params_mut();
        v.extend(self.update_hidden.params_mut());
        v.extend(self.reset_input.params_mut());
        v.extend(self.reset_hidden.params_mut());
        v.extend(self.candidate_input.params_mut());
        v.extend(self.candidate_hidden.params_mut());
        v
    }
}

/// Additive attention pooling: `αₜ = softmax(tanh(hₜ Wa) · va)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    pub project: Linear,
    pub score: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub embedding: InputEmbedding,
    pub cell: GruCell,
    pub pool: Option<AttentionPool>,
    pub heads: Heads,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    input: Matrix,
    classes: Vec<usize>,
    steps: Vec<StepCache>,
    hidden: Matrix,
    pool: Option<PoolCache>,
}

#[derive(Debug, Clone)]
struct PoolCache {
    projected: Matrix,
    weights: Matrix,
    pooled: Matrix,
}

impl GruCache {
    pub(crate) fn pooling_weights(&self) -> Option<&Matrix> {
        self.pool.as_ref().map(|p| &p.weights)
    }

    pub fn hidden(&self) -> &Matrix {
        &self.hidden
    }
}

impl GruParams {
    pub fn new(cfg: &ControllerConfig, rng: &mut RngStream) -> Self {
        let embedding = InputEmbedding::new(cfg, rng);
        let cell = GruCell::new("gru", cfg.model_dim, cfg.model_dim, cfg.init_scale, rng);
        let pool = (cfg.variant == super::Variant::GruAttn).then(|| AttentionPool {
            project: Linear::new("pool.project", cfg.model_dim, cfg.attention_dim, false, cfg.init_scale, rng),
            score: Linear::new("pool.score", cfg.attention_dim, 1, false, cfg.init_scale, rng),
        });
        let heads = Heads::new(cfg, rng);
        GruParams { embedding, cell, pool, heads }
    }

    pub(super) fn backward(&mut self, cache: &GruCache, dlogits: &Matrix, dvalue: f64) -> Result<()> {
        let n = cache.hidden.rows();
        let mut dhidden = self.heads.policy.backward(&cache.hidden, dlogits)?;
        match (&mut self.pool, &cache.pool) {
            (Some(pool), Some(pc)) => {
                let dpooled = self.heads.value.backward(&pc.pooled, &Matrix::row_vector(&[dvalue]))?;
                // pooled = Σ αₜ hₜ
                let mut dscores = Matrix::zeros(n, 1);
                let mut dalpha = vec![0.0; n];
                for t in 0..n {
                    let a = pc.weights[(0, t)];
                    let mut dot = 0.0;
                    for (g, (&p, &h)) in dhidden.row_mut(t).iter_mut().zip(dpooled.data().iter().zip(cache.hidden.row(t))) {
                        *g += a * p;
                        dot += p * h;
                    }
                    dalpha[t] = dot;
                }
                let inner: f64 = (0..n).map(|t| pc.weights[(0, t)] * dalpha[t]).sum();
                for t in 0..n {
                    dscores[(t, 0)] = pc.weights[(0, t)] * (dalpha[t] - inner);
                }
                let dprojected = pool.score.backward(&pc.projected, &dscores)?;
                let dpre = dprojected.hadamard(&pc.projected.map(|u| 1.0 - u * u))?;
                dhidden.add_assign(&pool.project.backward(&cache.hidden, &dpre)?)?;
            }
            _ => {
                let last = cache.hidden.select_rows(&[n - 1]);
                let dlast = self.heads.value.backward(&last, &Matrix::row_vector(&[dvalue]))?;
                for (g, &d) in dhidden.row_mut(n - 1).iter_mut().zip(dlast.data()) {
                    *g += d;
                }
            }
        }

        let mut dinput = Matrix::zeros(n, self.cell.candidate_input.weight.value.rows());
        let mut carry = Matrix::zeros(1, self.cell.hidden_dim());
        for t in (0..n).rev() {
            let mut dh = Matrix::row_vector(dhidden.row(t));
            dh.add_assign(&carry)?;
            let (dx, dprev) = self.cell.step_backward(&cache.steps[t], &dh)?;
            dinput.row_mut(t).copy_from_slice(dx.data());
            carry = dprev;
        }
        self.embedding.backward(&cache.input, &cache.classes, &dinput)
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.embedding.params();
        v.extend(self.cell.params());
        if let Some(p) = &self.pool {
            v.extend(p.project.params());
            v.extend(p.score.params());
        }
        v.extend(self.heads.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.embedding.params_mut();
        v.extend(self.cell.params_mut());
        if let Some(p) = &mut self.pool {
            v.extend(p.project.params_mut());
            v.extend(p.score.params_mut());
        }
        v.extend(self.heads.params_mut());
        v
    }
}

/// Runs the recurrent controller over one candidate sequence. With
/// `attention`, the value head reads an attention-pooled summary of all
/// hidden states; otherwise it reads the final hidden state.
pub fn gru_forward(params: &GruParams, sequence: &Matrix, classes: &[usize], attention: bool) -> Result<PolicyOutput> {
    let embedded = params.embedding.forward(sequence, classes)?;
    let n = embedded.rows();
    let width = params.cell.hidden_dim();
    let mut h = Matrix::zeros(1, width);
    let mut hidden = Matrix::zeros(n, width);
    let mut steps = Vec::with_capacity(n);
    for t in 0..n {
        let x = embedded.select_rows(&[t]);
        let (next, c) = params.cell.step_cached(&x, &h)?;
        hidden.row_mut(t).copy_from_slice(next.data());
        steps.push(c);
        h = next;
    }
    let logits = params.heads.policy.forward(&hidden)?;
    let (value, pool) = match (&params.pool, attention) {
        (Some(pool), true) => {
            let projected = pool.project.forward(&hidden)?.map(f64::tanh);
            let scores = pool.score.forward(&projected)?;
            let weights = scores.transpose().softmax_rows();
            let pooled = weights.matmul(&hidden)?;
            let value = params.heads.value.forward(&pooled)?[(0, 0)];
            (value, Some(PoolCache { projected, weights, pooled }))
        }
        _ => (params.heads.value.forward(&h)?[(0, 0)], None),
    };
    logits.ensure_finite("controller logits")?;
    Ok(PolicyOutput {
        logits,
        value,
        cache: ForwardCache::Gru(GruCache {
            input: sequence.clone(),
            classes: classes.to_vec(),
            steps,
            hidden,
            pool,
        }),
    })
}
