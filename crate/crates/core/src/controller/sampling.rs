use serde::{Deserialize, Serialize};

use crate::numkit::{log_sum_exp, softmax_in_place, Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleMode {
    Stochastic,
    /// Argmax; equal logits resolve to discard.
    Greedy,
}

/// Sampled keep (1) / discard (0) decisions with their log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub actions: Vec<u8>,
    pub log_probs: Vec<f64>,
}

impl ActionSample {
    pub fn kept(&self) -> usize {
        self.actions.iter().filter(|&&a| a == 1).count()
    }
}

/// Draws one binary action per logits row.
///
/// ```
/// use synsel::controller::{sample_actions, SampleMode};
/// use synsel::numkit::{Matrix, RngStream, StreamId};
/// let logits = Matrix::zeros(3, 2);
/// let mut rng = RngStream::new(1, StreamId::ActionSample);
/// let s = sample_actions(&logits, &mut rng, SampleMode::Greedy);
/// assert_eq!(s.actions, vec![0, 0, 0]);
/// ```
pub fn sample_actions(logits: &Matrix, rng: &mut RngStream, mode: SampleMode) -> ActionSample {
    let mut actions = Vec::with_capacity(logits.rows());
    let mut log_probs = Vec::with_capacity(logits.rows());
    for row in logits.iter_rows() {
        let action = match mode {
            SampleMode::Greedy => u8::from(row[1] > row[0]),
            SampleMode::Stochastic => {
                let mut p = row.to_vec();
                softmax_in_place(&mut p);
                u8::from(rng.uniform() < p[1])
            }
        };
        log_probs.push(row[action as usize] - log_sum_exp(row));
        actions.push(action);
    }
    ActionSample { actions, log_probs }
}

/// `∂ log π(a) / ∂ logits = onehot(a) − softmax(logits)` for one row.
pub fn log_prob_gradient(row: &[f64], action: u8) -> [f64; 2] {
    let mut p = [row[0], row[1]];
    softmax_in_place(&mut p);
    let mut g = [-p[0], -p[1]];
    g[action as usize] += 1.0;
    g
}

/// Entropy of one row and its gradient with respect to the logits.
pub fn entropy_gradient(row: &[f64]) -> (f64, [f64; 2]) {
    let lse = log_sum_exp(row);
    let logp = [row[0] - lse, row[1] - lse];
    let p = [logp[0].exp(), logp[1].exp()];
    let h = -(p[0] * logp[0] + p[1] * logp[1]);
    (h, [-p[0] * (logp[0] + h), -p[1] * (logp[1] + h)])
}
