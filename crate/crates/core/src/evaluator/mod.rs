//! Downstream classifier training, reward extraction and test metrics.

mod metrics;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::FeatureSet;
use crate::numkit::{log_sum_exp, Matrix, ParamTensor, Parameterized, RngStream};

pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};

/// Number of trailing epochs the reward looks at.
pub const REWARD_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierModel {
    SoftmaxRegression,
    OneHiddenLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub model: ClassifierModel,
    /// Width of the hidden layer; ignored by softmax regression.
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Seed of the stream used for initialization and shuffling.
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            model: ClassifierModel::SoftmaxRegression,
            hidden: 32,
            epochs: 30,
            batch_size: 16,
            learning_rate: 0.05,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < REWARD_WINDOW {
            return Err(Error::Config(format!(
                "classifier needs at least {REWARD_WINDOW} epochs, got {}",
                self.epochs
            )));
        }
        if self.batch_size == 0 || (self.model == ClassifierModel::OneHiddenLayer && self.hidden == 0) {
            return Err(Error::Config("classifier widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("classifier learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Softmax regression or a one-hidden-layer ReLU network.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// `[w, b]` or `[w1, b1, w2, b2]`.
    pub params: Vec<ParamTensor>,
}

impl Classifier {
    pub fn new(model: ClassifierModel, hidden: usize, dim: usize, classes: usize, rng: &mut RngStream) -> Self {
        let mut layer = |name: &str, fan_in: usize, fan_out: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = Matrix::from_fn(fan_in, fan_out, |_, _| bound * (2.0 * rng.uniform() - 1.0));
            [ParamTensor::new(format!("{name}.w"), w), ParamTensor::zeros(format!("{name}.b"), 1, fan_out)]
        };
        let params = match model {
            ClassifierModel::SoftmaxRegression => layer("out", dim, classes).to_vec(),
            ClassifierModel::OneHiddenLayer => {
                let mut p = layer("hidden", dim, hidden).to_vec();
                p.extend(layer("out", hidden, classes));
                p
            }
        };
        Classifier { params }
    }

    fn logits_with_hidden(&self, x: &Matrix) -> Result<(Matrix, Option<Matrix>)> {
        let affine = |x: &Matrix, w: &ParamTensor, b: &ParamTensor| x.matmul(&w.value)?.add_row_broadcast(&b.value);
        if self.params.len() == 2 {
            Ok((affine(x, &self.params[0], &self.params[1])?, None))
        } else {
            let h = affine(x, &self.params[0], &self.params[1])?.relu();
            Ok((affine(&h, &self.params[2], &self.params[3])?, Some(h)))
        }
    }

    /// Class probabilities, one row per sample.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.logits_with_hidden(x)?.0.softmax_rows())
    }

    /// Mean cross-entropy plus `weight_decay/2 · ‖W‖²` (weights only). The
    /// gradient is accumulated into the parameters.
    pub fn loss_and_grad(&mut self, x: &Matrix, labels: &[usize], weight_decay: f64) -> Result<f64> {
        let n = x.rows() as f64;
        let (logits, hidden) = self.logits_with_hidden(x)?;
        let mut loss = 0.0;
        let mut dlogits = logits.softmax_rows();
        for (r, &y) in labels.iter().enumerate() {
            loss -= logits[(r, y)] - log_sum_exp(logits.row(r));
            dlogits[(r, y)] -= 1.0;
        }
        loss /= n;
        let dlogits = dlogits.scale(1.0 / n);
        let input = hidden.as_ref().unwrap_or(x);
        let last = self.params.len() - 2;
        let dx = dlogits.matmul_t(&self.params[last].value)?;
        self.params[last].accumulate(&input.t_matmul(&dlogits)?);
        self.params[last + 1].accumulate(&dlogits.sum_rows());
        if let Some(h) = &hidden {
            let dh = Matrix::from_fn(h.rows(), h.cols(), |i, j| if h[(i, j)] > 0.0 { dx[(i, j)] } else { 0.0 });
            self.params[0].accumulate(&x.t_matmul(&dh)?);
            self.params[1].accumulate(&dh.sum_rows());
        }
        if weight_decay > 0.0 {
            for p in self.params.iter_mut().filter(|p| p.name.ends_with(".w")) {
                loss += 0.5 * weight_decay * p.value.data().iter().map(|w| w * w).sum::<f64>();
                let g = p.value.scale(weight_decay);
                p.accumulate(&g);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("classifier loss is not finite".into()));
        }
        Ok(loss)
    }

    pub fn accuracy(&self, set: &FeatureSet) -> Result<f64> {
        let p = self.predict_proba(set.features())?;
        let hits = p
            .iter_rows()
            .zip(set.labels())
            .filter(|(row, &y)| metrics::argmax(row) == y)
            .count();
        Ok(hits as f64 / set.len() as f64)
    }
}

impl Parameterized for Classifier {
    fn params(&self) -> Vec<&ParamTensor> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.params.iter_mut().collect()
    }
}

/// Validation accuracy after every epoch together with the trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurve {
    pub val_accuracy: Vec<f64>,
    pub model: Classifier,
}

/// Minibatch gradient descent on cross-entropy.
pub fn train_classifier(
    train: &FeatureSet,
    val: &FeatureSet,
    cfg: &ClassifierConfig,
    rng: &mut RngStream,
) -> Result<TrainingCurve> {
    cfg.validate()?;
    let k = train.class_count();
    if k < 2 {
        return Err(Error::Validation("classifier needs at least two classes".into()));
    }
    if val.dim() != train.dim() || val.class_count() != k {
        return Err(Error::Validation(format!(
            "validation split is {}-dimensional with {} classes, training split {}-dimensional with {k}",
            val.dim(),
            val.class_count(),
            train.dim()
        )));
    }
    let mut model = Classifier::new(cfg.model, cfg.hidden, train.dim(), k, rng);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.features().select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            model.zero_grads();
            model.loss_and_grad(&x, &y, cfg.weight_decay)?;
            for p in &mut model.params {
                let g = p.grad.clone();
                p.value.add_scaled(&g, -cfg.learning_rate)?;
            }
        }
        curve.push(model.accuracy(val)?);
    }
    Ok(TrainingCurve { val_accuracy: curve, model })
}

/// Best validation accuracy over the last five epochs.
pub fn reward_from_curve(curve: &[f64]) -> Result<f64> {
    if curve.len() < REWARD_WINDOW {
        return Err(Error::Validation(format!(
            "curve has {} epochs, reward needs {REWARD_WINDOW}",
            curve.len()
        )));
    }
    Ok(curve[curve.len() - REWARD_WINDOW..].iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Trains from scratch on `original` plus the extra samples, returning the
/// validation reward and the test-set report. `rng` is cloned so repeated
/// calls see the same initialization and shuffles.
pub fn evaluate_selection(
    original: &FeatureSet,
    extra: &Matrix,
    extra_labels: &[usize],
    val: &FeatureSet,
    test: &FeatureSet,
    cfg: &ClassifierConfig,
    rng: &RngStream,
) -> Result<(f64, MetricsReport)> {
    let train = original.extended(extra, extra_labels)?;
    let curve = train_classifier(&train, val, cfg, &mut rng.clone())?;
    let reward = reward_from_curve(&curve.val_accuracy)?;
    let scores = curve.model.predict_proba(test.features())?;
    Ok((reward, compute_metrics(&scores, test.labels())?))
}
