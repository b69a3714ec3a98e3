//! Finite-difference verification of every hand-derived backward pass at
//! small shapes (sequence length 6, input width 8).

use std::time::Instant;

use serde::Serialize;

use crate::controller::gru::GruCell;
use crate::controller::layers::{attention_backward, attention_weights, uniform_matrix};
use crate::controller::{
    log_prob_gradient, sample_actions, Controller, ControllerConfig, FeedForward, MultiHead, SampleMode, Variant,
};
use crate::error::Result;
use crate::evaluator::{Classifier, ClassifierModel};
use crate::numkit::{grad_check, log_sum_exp, Matrix, ParamTensor, Parameterized, RngStream, StreamId};
use crate::policy::{accumulate_loss_gradient, ppo_surrogate, ppo_surrogate_grad, PolicyTerm, Trajectory, TrajectoryStep};

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-5;

const SEQ: usize = 6;
const INPUT: usize = 8;
const EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

/// Plain list of tensors, for checks whose inputs are themselves perturbed.
struct Tensors(Vec<ParamTensor>);

impl Parameterized for Tensors {
    fn params(&self) -> Vec<&ParamTensor> {
        self.0.iter().collect()
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.0.iter_mut().collect()
    }
}

/// A block together with its input, so the input gradient is checked too.
struct WithInput<B> {
    block: B,
    x: ParamTensor,
}

macro_rules! with_input_params {
    ($t:ty) => {
        impl Parameterized for WithInput<$t> {
            fn params(&self) -> Vec<&ParamTensor> {
                let mut v = self.block.params();
                v.push(&self.x);
                v
            }
            fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
                let mut v = self.block.params_mut();
                v.push(&mut self.x);
                v
            }
        }
    };
}

with_input_params!(MultiHead);
with_input_params!(FeedForward);
with_input_params!(GruCell);

fn rng() -> RngStream {
    RngStream::new(41, StreamId::ControllerInit)
}

/// Weighted sum of `out` with fixed weights `w`; its gradient is `w`.
fn probe(out: &Matrix, w: &Matrix) -> Result<f64> {
    Ok(out.hadamard(w)?.sum())
}

fn attention() -> Result<(usize, f64)> {
    let mut r = rng();
    let key_dim = 4;
    let mut m = Tensors(vec![
        ParamTensor::new("q", uniform_matrix(SEQ, key_dim, 1.0, &mut r)),
        ParamTensor::new("k", uniform_matrix(SEQ, key_dim, 1.0, &mut r)),
        ParamTensor::new("v", uniform_matrix(SEQ, INPUT, 1.0, &mut r)),
    ]);
    let w = uniform_matrix(SEQ, INPUT, 1.0, &mut r);
    let report = grad_check(
        &mut m,
        |m| {
            let (q, k, v) = (&m.0[0].value, &m.0[1].value, &m.0[2].value);
            let (weights, out) = attention_weights(q, k, v, key_dim)?;
            let (dq, dk, dv) = attention_backward(q, k, v, &weights, key_dim, &w)?;
            m.0[0].accumulate(&dq);
            m.0[1].accumulate(&dk);
            m.0[2].accumulate(&dv);
            probe(&out, &w)
        },
        EPSILON,
    )?;
    Ok((report.checked, report.max_rel_error))
}

fn multi_head() -> Result<(usize, f64)> {
    let mut r = rng();
    let mut m = WithInput {
        block: MultiHead::new("mh", INPUT, 2, 4, 4, 1.0, &mut r),
        x: ParamTensor::new("x", uniform_matrix(SEQ, INPUT, 1.0, &mut r)),
    };
    let w = uniform_matrix(SEQ, INPUT, 1.0, &mut r);
    let report = grad_check(
        &mut m,
        |m| {
            let (out, cache) = m.block.forward(&m.x.value)?;
            let dx = m.block.backward(&cache, &w)?;
            m.x.accumulate(&dx);
            probe(&out, &w)
        },
        EPSILON,
    )?;
    Ok((report.checked, report.max_rel_error))
}

fn feed_forward() -> Result<(usize, f64)> {
    let mut r = rng();
    let mut m = WithInput {
        block: FeedForward::new("ffn", INPUT, 16, 1.0, &mut r),
        x: ParamTensor::new("x", uniform_matrix(SEQ, INPUT, 1.0, &mut r)),
    };
    for p in m.block.params_mut() {
        if p.name.ends_with(".b") {
            let (rows, cols) = p.value.shape();
            p.value = uniform_matrix(rows, cols, 0.5, &mut r);
        }
    }
    let w = uniform_matrix(SEQ, INPUT, 1.0, &mut r);
    let report = grad_check(
        &mut m,
        |m| {
            let (out, cache) = m.block.forward(&m.x.value)?;
            let dx = m.block.backward(&cache, &w)?;
            m.x.accumulate(&dx);
            probe(&out, &w)
        },
        EPSILON,
    )?;
    Ok((report.checked, report.max_rel_error))
}

fn small_controller(variant: Variant, layers: usize) -> Result<Controller> {
    let cfg = ControllerConfig {
        variant,
        input_dim: INPUT,
        class_count: 3,
        model_dim: 8,
        heads: 2,
        key_dim: 4,
        value_dim: 4,
        layers,
        ffn_hidden: 16,
        attention_dim: 6,
        init_scale: 1.5,
        zero_policy_head: false,
        ..ControllerConfig::default()
    };
    let mut c = Controller::new(cfg, &mut rng())?;
    // non-zero biases and a value far from zero keep every gradient entry
    // well above finite-difference round-off
    let mut r = RngStream::new(23, StreamId::ControllerInit);
    for p in c.params_mut() {
        if p.name.ends_with(".b") {
            let (rows, cols) = p.value.shape();
            p.value = uniform_matrix(rows, cols, 0.5, &mut r);
        }
        if p.name == "value.b" {
            p.value[(0, 0)] = 2.0;
        }
    }
    Ok(c)
}

fn sequence(seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = RngStream::new(seed, StreamId::DataGen);
    (uniform_matrix(SEQ, INPUT, 1.5, &mut r), (0..SEQ).map(|i| (i * 7 + 1) % 3).collect())
}

fn encoder_with_heads() -> Result<(usize, f64)> {
    let mut c = small_controller(Variant::Transformer, 2)?;
    let (x, classes) = sequence(5);
    let actions = [1u8, 0, 0, 1, 1, 0];
    let report = grad_check(
        &mut c,
        |c| {
            let out = c.forward(&x, &classes)?;
            let mut dlogits = Matrix::zeros(SEQ, 2);
            let mut total = out.value * out.value;
            for (r, &a) in actions.iter().enumerate() {
                let row = out.logits.row(r);
                total += row[a as usize] - log_sum_exp(row);
                dlogits.row_mut(r).copy_from_slice(&log_prob_gradient(row, a));
            }
            c.backward(&out, &dlogits, 2.0 * out.value)?;
            Ok(total)
        },
        EPSILON,
    )?;
    Ok((report.checked, report.max_rel_error))
}

fn gru_cell() -> Result<(usize, f64)> {
    let mut r = rng();
    let hidden = 8;
    let mut cell = GruCell::new("gru", INPUT, hidden, 1.0, &mut r);
    for p in cell.params_mut() {
        if p.name.ends_with(".b") {
            p.value = uniform_matrix(1, hidden, 0.5, &mut r);
        }
    }
    let mut m = WithInput { block: cell, x: ParamTensor::new("x", uniform_matrix(SEQ, INPUT, 1.0, &mut r)) };
    let w = uniform_matrix(SEQ, hidden, 1.0, &mut r);
    let report = grad_check(
        &mut m,
        |m| {
            // unrolled over the sequence; the probe reads every hidden state
            let mut h = Matrix::zeros(1, hidden);
            let mut caches = Vec::with_capacity(SEQ);
            let mut total = 0.0;
            for t in 0..SEQ {
                let (next, cache) = m.block.step_cached(&Matrix::row_vector(m.x.value.row(t)), &h)?;
                total += next.row(0).iter().zip(w.row(t)).map(|(a, b)| a * b).sum::<f64>();
                caches.push(cache);
                h = next;
            }
            let mut dh = Matrix::zeros(1, hidden);
            let mut dx = Matrix::zeros(SEQ, INPUT);
            for t in (0..SEQ).rev() {
                dh.add_assign(&Matrix::row_vector(w.row(t)))?;
                let (dxt, dprev) = m.block.step_backward(&caches[t], &dh)?;
                dx.row_mut(t).copy_from_slice(dxt.row(0));
                dh = dprev;
            }
            m.x.accumulate(&dx);
            Ok(total)
        },
        EPSILON,
    )?;
    Ok((report.checked, report.max_rel_error))
}

fn softmax_regression_loss() -> Result<(usize, f64)> {
    let mut r = rng();
    let mut clf = Classifier::new(ClassifierModel::SoftmaxRegression, 0, INPUT, 3, &mut r);
    for p in clf.params_mut() {
        let (rows, cols) = p.value.shape();
        p.value = uniform_matrix(rows, cols, 1.0, &mut r);
    }
    let (x, labels) = sequence(7);
    let report = grad_check(&mut clf, |c| c.loss_and_grad(&x, &labels, 1e-2), EPSILON)?;
    Ok((report.checked, report.max_rel_error))
}

fn ppo_surrogate_check() -> Result<(usize, f64)> {
    // scalar surrogate on both sides of both clip edges
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (ratio, adv) in [(0.5, 1.0), (0.5, -1.0), (1.0, 0.7), (1.5, 1.0), (1.5, -1.0), (0.9, -0.3)] {
        let mut m = Tensors(vec![ParamTensor::new("ratio", Matrix::row_vector(&[ratio]))]);
        let report = grad_check(
            &mut m,
            |m| {
                let x = m.0[0].value[(0, 0)];
                m.0[0].grad[(0, 0)] += ppo_surrogate_grad(x, adv, 0.2);
                Ok(ppo_surrogate(x, adv, 0.2))
            },
            EPSILON,
        )?;
        worst = worst.max(report.max_rel_error);
        checked += report.checked;
    }

    // full clipped objective through the controller, with an old policy
    // that differs from the current one so both branches occur
    let mut c = small_controller(Variant::Transformer, 1)?;
    let mut r = RngStream::new(3, StreamId::ActionSample);
    let mut steps = Vec::new();
    for t in 0..2 {
        let (x, classes) = sequence(11 + t as u64);
        let out = c.forward(&x, &classes)?;
        let s = sample_actions(&out.logits, &mut r, SampleMode::Stochastic);
        let old: Vec<f64> = s.log_probs.iter().map(|lp| lp + 0.6 * (r.uniform() - 0.5)).collect();
        let smoothed = 0.7 + 0.05 * t as f64;
        steps.push(TrajectoryStep {
            batch: t,
            candidates: (0..SEQ).map(|i| (classes[i], i)).collect(),
            sequence: x,
            classes,
            actions: s.actions,
            old_log_probs: old,
            value: out.value,
            reward: smoothed,
            smoothed,
            advantage: smoothed - out.value,
        });
    }
    let trajectory = Trajectory { steps };
    let term = PolicyTerm::Clipped { epsilon: 0.2 };
    let report = grad_check(&mut c, |c| Ok(accumulate_loss_gradient(c, &trajectory, term, 0.5, 0.01)?.loss), EPSILON)?;
    Ok((checked + report.checked, worst.max(report.max_rel_error)))
}

/// Runs every check; an `Err` means a check could not be evaluated at all.
pub fn grad_check_suite() -> Result<Vec<CheckOutcome>> {
    let checks: [(&'static str, fn() -> Result<(usize, f64)>); 7] = [
        ("attention", attention),
        ("multi-head", multi_head),
        ("feed-forward", feed_forward),
        ("encoder+heads", encoder_with_heads),
        ("gru-cell", gru_cell),
        ("softmax-regression-loss", softmax_regression_loss),
        ("ppo-surrogate", ppo_surrogate_check),
    ];
    checks
        .into_iter()
        .map(|(name, run)| {
            let start = Instant::now();
            let (checked, max_rel_error) = run()?;
            Ok(CheckOutcome { name, max_rel_error, checked, seconds: start.elapsed().as_secs_f64() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let outcomes = grad_check_suite().unwrap();
        assert_eq!(outcomes.len(), 7);
        for o in &outcomes {
            assert!(o.passed(), "{o:?}");
            assert!(o.checked > 0);
        }
    }
}
