//! Policy-gradient training of the selection controller.
//!
//! Rewards are smoothed with an exponential moving average, the advantage
//! is the smoothed reward minus the controller's state value, and the
//! controller is updated either with the clipped PPO surrogate or with a
//! single REINFORCE-with-baseline pass. Both share the value and entropy
//! terms, so the two algorithms differ only in the policy term.

mod adam;

use serde::{Deserialize, Serialize};

use crate::controller::{entropy_gradient, log_prob_gradient, Controller};
use crate::error::{Error, Result};
use crate::numkit::{log_sum_exp, Matrix, Parameterized};

pub use adam::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Ppo,
    Reinforce,
}

impl Algorithm {
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Reinforce => "reinforce",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppo" => Ok(Algorithm::Ppo),
            "reinforce" => Ok(Algorithm::Reinforce),
            other => Err(Error::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Exponential moving average over the rewards of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTracker {
    alpha: f64,
    history: Vec<f64>,
}

impl RewardTracker {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("EMA alpha {alpha} outside (0, 1)")));
        }
        Ok(RewardTracker { alpha, history: Vec::new() })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Smoothed values produced so far.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    pub fn current(&self) -> Option<f64> {
        self.history.last().copied()
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// Folds one raw reward into the tracker and returns the smoothed value.
///
/// ```
/// use synsel::policy::{ema_update, RewardTracker};
/// let mut t = RewardTracker::new(0.8).unwrap();
/// assert_eq!(ema_update(&mut t, 0.7).unwrap(), 0.7);
/// assert!((ema_update(&mut t, 0.8).unwrap() - 0.72).abs() < 1e-15);
/// ```
pub fn ema_update(tracker: &mut RewardTracker, raw: f64) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::Numeric(format!("reward {raw} is not finite")));
    }
    let smoothed = match tracker.current() {
        None => raw,
        Some(prev) => tracker.alpha * prev + (1.0 - tracker.alpha) * raw,
    };
    tracker.history.push(smoothed);
    Ok(smoothed)
}

pub fn advantage(smoothed_reward: f64, state_value: f64) -> f64 {
    smoothed_reward - state_value
}

pub fn prob_ratio(new_log_prob: f64, old_log_prob: f64) -> f64 {
    (new_log_prob - old_log_prob).exp()
}

pub fn ppo_surrogate(ratio: f64, adv: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * adv).min(clipped * adv)
}

/// Derivative of [`ppo_surrogate`] with respect to the ratio. Zero wherever
/// the clipped branch is active; at the clip boundary the unclipped branch
/// is used.
pub fn ppo_surrogate_grad(ratio: f64, adv: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * adv <= clipped * adv {
        adv
    } else {
        0.0
    }
}

/// One batch step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub batch: usize,
    /// `(class, pool index)` of every candidate in the batch.
    pub candidates: Vec<(usize, usize)>,
    pub sequence: Matrix,
    pub classes: Vec<usize>,
    pub actions: Vec<u8>,
    pub old_log_probs: Vec<f64>,
    pub value: f64,
    pub reward: f64,
    pub smoothed: f64,
    pub advantage: f64,
}

impl TrajectoryStep {
    fn check(&self, t: usize) -> Result<()> {
        let n = self.actions.len();
        if n == 0
            || self.old_log_probs.len() != n
            || self.classes.len() != n
            || self.sequence.rows() != n
            || self.candidates.len() != n
        {
            return Err(Error::State(format!("trajectory step {t} is incomplete")));
        }
        if ![self.value, self.reward, self.smoothed, self.advantage]
            .iter()
            .chain(&self.old_log_probs)
            .all(|v| v.is_finite())
        {
            return Err(Error::State(format!("trajectory step {t} holds non-finite values")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of `(step, candidate)` terms.
    pub fn decisions(&self) -> usize {
        self.steps.iter().map(|s| s.actions.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::State("trajectory has no steps".into()));
        }
        for (t, s) in self.steps.iter().enumerate() {
            s.check(t)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PPOConfig {
    pub epsilon: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub value_weight: f64,
    pub entropy_weight: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub ema_alpha: f64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            epsilon: 0.2,
            epochs: 4,
            learning_rate: 2.5e-4,
            value_weight: 0.5,
            entropy_weight: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            ema_alpha: 0.8,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.epsilon > 0.0) {
            return bad("ppo epsilon must be positive");
        }
        if self.epochs == 0 {
            return bad("ppo epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.value_weight < 0.0 || self.entropy_weight < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha < 1.0) {
            return bad("ema alpha must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Which policy term a gradient pass uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyTerm {
    Clipped { epsilon: f64 },
    Reinforce,
}

/// Statistics of one gradient pass over a trajectory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Accumulates the gradient of the minimized loss
/// `−mean(policy term) + c_v·mean_t (V_t − Q̂_t)² − c_e·mean(entropy)`
/// into the controller's gradient buffers (which are zeroed first).
pub fn accumulate_loss_gradient(
    controller: &mut Controller,
    trajectory: &Trajectory,
    term: PolicyTerm,
    value_weight: f64,
    entropy_weight: f64,
) -> Result<PassStats> {
    trajectory.validate()?;
    controller.zero_grads();
    let n = trajectory.decisions() as f64;
    let steps = trajectory.len() as f64;
    let mut stats = PassStats::default();
    for (t, step) in trajectory.steps.iter().enumerate() {
        let out = controller.forward(&step.sequence, &step.classes).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("trajectory step {t}: {m}")),
            other => other,
        })?;
        let mut dlogits = Matrix::zeros(step.actions.len(), 2);
        let mut policy = 0.0;
        let mut entropy = 0.0;
        for (i, (&a, &old)) in step.actions.iter().zip(&step.old_log_probs).enumerate() {
            let row = out.logits.row(i);
            let new = row[a as usize] - log_sum_exp(row);
            let g = log_prob_gradient(row, a);
            let ratio = prob_ratio(new, old);
            // ∂term/∂log π
            let dterm = match term {
                PolicyTerm::Clipped { epsilon } => {
                    policy += ppo_surrogate(ratio, step.advantage, epsilon);
                    if (ratio - 1.0).abs() > epsilon {
                        stats.clip_fraction += 1.0;
                    }
                    ppo_surrogate_grad(ratio, step.advantage, epsilon) * ratio
                }
                PolicyTerm::Reinforce => {
                    policy += new * step.advantage;
                    step.advantage
                }
            };
            stats.mean_ratio += ratio;
            let (h, dh) = entropy_gradient(row);
            entropy += h;
            let d = dlogits.row_mut(i);
            for j in 0..2 {
                d[j] = -(dterm * g[j] + entropy_weight * dh[j]) / n;
            }
        }
        let verr = out.value - step.smoothed;
        let loss = -policy / n + value_weight * verr * verr / steps - entropy_weight * entropy / n;
        if !loss.is_finite() || !out.value.is_finite() {
            return Err(Error::Numeric(format!("loss at trajectory step {t} is not finite")));
        }
        stats.loss += loss;
        stats.value_loss += verr * verr / steps;
        stats.entropy += entropy / n;
        controller.backward(&out, &dlogits, 2.0 * value_weight * verr / steps)?;
    }
    stats.mean_ratio /= n;
    stats.clip_fraction /= n;
    Ok(stats)
}

/// Summary of one call to [`ppo_update`] or [`reinforce_update`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// One entry per optimization epoch, in order.
    pub epochs: Vec<PassStats>,
}

impl UpdateStats {
    fn mean(&self, f: impl Fn(&PassStats) -> f64) -> f64 {
        self.epochs.iter().map(f).sum::<f64>() / self.epochs.len().max(1) as f64
    }

    pub fn mean_ratio(&self) -> f64 {
        self.mean(|s| s.mean_ratio)
    }

    pub fn clip_fraction(&self) -> f64 {
        self.mean(|s| s.clip_fraction)
    }

    pub fn value_loss(&self) -> f64 {
        self.mean(|s| s.value_loss)
    }
}

/// Runs `cfg.epochs` full-trajectory passes of the clipped objective, one
/// optimizer step per pass. The old policy is the log-probs recorded in the
/// trajectory.
pub fn ppo_update(
    controller: &mut Controller,
    trajectory: &Trajectory,
    cfg: &PPOConfig,
    optimizer: &mut Adam,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let term = PolicyTerm::Clipped { epsilon: cfg.epsilon };
        let stats = accumulate_loss_gradient(controller, trajectory, term, cfg.value_weight, cfg.entropy_weight)?;
        optimizer.step(controller)?;
        epochs.push(stats);
    }
    Ok(UpdateStats { epochs })
}

/// One REINFORCE-with-baseline pass with the same value and entropy terms
/// as [`ppo_update`].
pub fn reinforce_update(
    controller: &mut Controller,
    trajectory: &Trajectory,
    cfg: &PPOConfig,
    optimizer: &mut Adam,
) -> Result<UpdateStats> {
    cfg.validate()?;
    let stats = accumulate_loss_gradient(
        controller,
        trajectory,
        PolicyTerm::Reinforce,
        cfg.value_weight,
        cfg.entropy_weight,
    )?;
    optimizer.step(controller)?;
    Ok(UpdateStats { epochs: vec![stats] })
}

pub fn update(
    algorithm: Algorithm,
    controller: &mut Controller,
    trajectory: &Trajectory,
    cfg: &PPOConfig,
    optimizer: &mut Adam,
) -> Result<UpdateStats> {
    match algorithm {
        Algorithm::Ppo => ppo_update(controller, trajectory, cfg, optimizer),
        Algorithm::Reinforce => reinforce_update(controller, trajectory, cfg, optimizer),
    }
}

/// `−mean over (step, candidate) of log π · A`, using the log-probs stored
/// at collection time.
pub fn reinforce_loss(trajectory: &Trajectory) -> Result<f64> {
    trajectory.validate()?;
    let total: f64 = trajectory
        .steps
        .iter()
        .map(|s| s.old_log_probs.iter().map(|lp| lp * s.advantage).sum::<f64>())
        .sum();
    Ok(-total / trajectory.decisions() as f64)
}
