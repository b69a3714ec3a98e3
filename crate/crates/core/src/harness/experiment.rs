use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, RewardFrequency, SyntheticTask};
use crate::baselines::SelectionMask;
use crate::controller::{sample_actions, Controller, SampleMode};
use crate::error::Result;
use crate::evaluator::{reward_from_curve, train_classifier};
use crate::featurestore::{build_batches, compute_centroids, BatchPlan, FeatureSet};
use crate::numkit::{Matrix, RngStream, StreamId};
use crate::policy::{advantage, ema_update, update, Adam, RewardTracker, Trajectory, TrajectoryStep};

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_reward: f64,
    pub smoothed_reward: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub mean_ratio: f64,
    pub selected_per_class: Vec<usize>,
    pub corrupted_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Greedy selection of the trained controller.
    pub mask: SelectionMask,
    pub log: Vec<IterationLog>,
    pub baseline_reward: f64,
    pub controller: Controller,
}

impl RunResult {
    pub fn keep_rate(&self, pool_size: usize) -> f64 {
        self.mask.total() as f64 / pool_size as f64
    }
}

/// Controller input of one batch: candidate features, optionally followed by
/// the candidate's centroid distance.
struct BatchInput {
    sequence: Matrix,
    classes: Vec<usize>,
    candidates: Vec<(usize, usize)>,
}

fn batch_inputs(plan: &BatchPlan, task: &SyntheticTask, distance_feature: bool) -> Vec<BatchInput> {
    (0..plan.len())
        .map(|b| {
            let (features, classes) = plan.materialize(b, &task.pool);
            let entries = &plan.batches[b];
            let sequence = if distance_feature {
                Matrix::from_fn(features.rows(), features.cols() + 1, |r, c| {
                    if c < features.cols() { features[(r, c)] } else { entries[r].distance }
                })
            } else {
                features
            };
            BatchInput { sequence, classes, candidates: entries.iter().map(|e| (e.class, e.index)).collect() }
        })
        .collect()
}

/// Validation reward of a classifier trained on `train` plus the selection.
struct RewardOracle<'a> {
    task: &'a SyntheticTask,
    cfg: &'a ExperimentConfig,
    rng: RngStream,
}

impl RewardOracle<'_> {
    fn reward(&self, selection: &[Vec<usize>]) -> Result<f64> {
        let mask = SelectionMask::new("episode", None, selection.to_vec());
        let (extra, labels) = mask.gather(&self.task.pool);
        let train: FeatureSet = self.task.train.extended(&extra, &labels)?;
        let curve = train_classifier(&train, &self.task.val, &self.cfg.classifier, &mut self.rng.clone())?;
        reward_from_curve(&curve.val_accuracy)
    }
}

/// Trains a controller on `task` and returns its greedy selection. One log
/// line per iteration is appended to `log` as JSON.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    task: &SyntheticTask,
    seed: u64,
    mut log: Option<&mut dyn Write>,
) -> Result<RunResult> {
    cfg.validate()?;
    let k = task.pool.class_count();
    let centroids = compute_centroids(&task.train)?;
    let mut plan = build_batches(&task.pool, &centroids, cfg.batches, cfg.batch_order)?;
    if cfg.controller.per_class_sequences {
        plan = plan.split_by_class(k);
    }
    let inputs = batch_inputs(&plan, task, cfg.distance_feature);
    let oracle = RewardOracle { task, cfg, rng: RngStream::new(seed, StreamId::Classifier) };
    let baseline_reward = oracle.reward(&vec![Vec::new(); k])?;

    let mut controller = Controller::new(cfg.controller_config(), &mut RngStream::new(seed, StreamId::ControllerInit))?;
    if cfg.value_from_baseline {
        controller.set_value_bias(baseline_reward);
    }
    let mut optimizer = Adam::new(cfg.ppo.adam());
    let mut sampler = RngStream::new(seed, StreamId::ActionSample);
    let mut history = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let mut selection = vec![Vec::new(); k];
        let mut steps = Vec::with_capacity(inputs.len());
        let mut rewards = Vec::with_capacity(inputs.len());
        for (b, input) in inputs.iter().enumerate() {
            let out = controller.forward(&input.sequence, &input.classes)?;
            let sample = sample_actions(&out.logits, &mut sampler, SampleMode::Stochastic);
            for (&(c, i), &a) in input.candidates.iter().zip(&sample.actions) {
                if a == 1 {
                    selection[c].push(i);
                }
            }
            let last = b + 1 == inputs.len();
            if cfg.reward_frequency == RewardFrequency::PerBatch || last {
                rewards.push(oracle.reward(&selection)?);
            }
            steps.push(TrajectoryStep {
                batch: b,
                candidates: input.candidates.clone(),
                sequence: input.sequence.clone(),
                classes: input.classes.clone(),
                actions: sample.actions,
                old_log_probs: sample.log_probs,
                value: out.value,
                reward: 0.0,
                smoothed: 0.0,
                advantage: 0.0,
            });
        }
        if cfg.reward_frequency == RewardFrequency::PerEpisode {
            rewards = vec![rewards[0]; steps.len()];
        }
        let mut tracker = RewardTracker::new(cfg.ppo.ema_alpha)?;
        for (step, &q) in steps.iter_mut().zip(&rewards) {
            step.reward = q;
            step.smoothed = ema_update(&mut tracker, q)?;
            step.advantage = advantage(step.smoothed, step.value);
        }
        let trajectory = Trajectory { steps };
        let stats = update(cfg.algorithm, &mut controller, &trajectory, &cfg.ppo, &mut optimizer)?;

        let episode = SelectionMask::new("episode", None, selection);
        let entry = IterationLog {
            iteration,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            smoothed_reward: tracker.current().unwrap_or(0.0),
            clip_fraction: stats.clip_fraction(),
            value_loss: stats.value_loss(),
            mean_ratio: stats.mean_ratio(),
            selected_per_class: episode.counts(),
            corrupted_fraction: episode.corrupted_fraction(&task.pool),
        };
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &entry)?;
            writeln!(w)?;
        }
        history.push(entry);
    }

    let mut greedy = vec![Vec::new(); k];
    for input in &inputs {
        let out = controller.forward(&input.sequence, &input.classes)?;
        let sample = sample_actions(&out.logits, &mut sampler, SampleMode::Greedy);
        for (&(c, i), &a) in input.candidates.iter().zip(&sample.actions) {
            if a == 1 {
                greedy[c].push(i);
            }
        }
    }
    let method = format!("rl-{}-{}", cfg.algorithm.label(), cfg.controller.variant.label());
    Ok(RunResult {
        mask: SelectionMask::new(method, None, greedy),
        log: history,
        baseline_reward,
        controller,
    })
}
