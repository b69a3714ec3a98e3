//! Synthetic benchmark, the RL selection loop, method comparison over seeds
//! and centroid-distance histograms.

mod compare;
mod experiment;
mod histogram;
mod task;

use serde::{Deserialize, Serialize};

use crate::baselines::FillOrder;
use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::evaluator::ClassifierConfig;
use crate::featurestore::BatchOrder;
use crate::policy::{Algorithm, PPOConfig};

pub use compare::{compare_methods, run_seed, assemble_report, ArmReport, ExperimentReport, MetricSummary, SeedArm, SeedOutcome};
pub use experiment::{run_experiment, IterationLog, RunResult};
pub use histogram::{distance_histogram, Histogram, HistogramRow};
pub use task::{generate_synthetic_task, simplex_means, CorruptionModel, SyntheticTask, TaskConfig};

/// When the classifier is retrained to produce rewards.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardFrequency {
    /// After every batch, on the cumulative selection.
    PerBatch,
    /// Once after the last batch; every step receives that reward.
    #[default]
    PerEpisode,
}

/// Defaults describe the desk benchmark. A partially given `ppo` or
/// `classifier` object is completed from that component's own defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    /// `input_dim` and `class_count` are overwritten from the task.
    pub controller: ControllerConfig,
    pub ppo: PPOConfig,
    pub classifier: ClassifierConfig,
    pub batches: usize,
    pub iterations: usize,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub reward_frequency: RewardFrequency,
    pub batch_order: BatchOrder,
    /// Append each candidate's centroid distance to its controller input.
    pub distance_feature: bool,
    /// Start the state value at the no-augmentation reward.
    pub value_from_baseline: bool,
    /// Augmentation ratio of the random, centroid and oracle arms.
    pub ratio: f64,
    /// Percentile band of the centroid arm.
    pub band: (f64, f64),
    pub fill_order: FillOrder,
    pub histogram_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: TaskConfig::default(),
            controller: ControllerConfig::default(),
            ppo: PPOConfig { learning_rate: 1e-3, entropy_weight: 0.0, ..PPOConfig::default() },
            classifier: ClassifierConfig {
                epochs: 100,
                batch_size: 1024,
                learning_rate: 0.5,
                weight_decay: 0.1,
                ..ClassifierConfig::default()
            },
            batches: 8,
            iterations: 600,
            algorithm: Algorithm::Ppo,
            seeds: (0..5).collect(),
            reward_frequency: RewardFrequency::PerEpisode,
            batch_order: BatchOrder::NearFirst,
            distance_feature: false,
            value_from_baseline: true,
            ratio: 1.0,
            band: (10.0, 90.0),
            fill_order: FillOrder::NearestFirst,
            histogram_bins: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.controller_config().validate()?;
        self.ppo.validate()?;
        self.classifier.validate()?;
        if self.batches == 0 || self.iterations == 0 {
            return Err(Error::Config("batches and iterations must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::Config(format!("augmentation ratio {} outside (0, 1]", self.ratio)));
        }
        Ok(())
    }

    /// Controller configuration with dimensions taken from the task.
    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            input_dim: self.task.dim + usize::from(self.distance_feature),
            class_count: self.task.classes,
            ..self.controller.clone()
        }
    }
}
