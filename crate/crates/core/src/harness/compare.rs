use serde::{Deserialize, Serialize, Serializer};

use super::{distance_histogram, generate_synthetic_task, run_experiment, ExperimentConfig, Histogram, SyntheticTask};
use crate::baselines::{select_by_centroid_distance, select_oracle, select_random, SelectionMask};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_selection, MetricsReport};
use crate::featurestore::compute_centroids;
use crate::numkit::{RngStream, StreamId};

fn round6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((x * 1e6).round() / 1e6)
}

/// Result of one arm on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedArm {
    pub method: String,
    pub seed: u64,
    pub task_checksum: String,
    pub reward: f64,
    pub selected_per_class: Vec<usize>,
    pub corrupted_fraction: Option<f64>,
    pub metrics: MetricsReport,
}

/// Everything one seed contributes to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub task_checksum: String,
    pub pool_corrupted_fraction: f64,
    pub rl_keep_rate: f64,
    pub reward_trace: Vec<f64>,
    pub selected_trace: Vec<usize>,
    pub rl_histogram: Histogram,
    pub pool_histogram: Histogram,
    pub arms: Vec<SeedArm>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    #[serde(serialize_with = "round6")]
    pub accuracy: f64,
    #[serde(serialize_with = "round6")]
    pub auc: f64,
    #[serde(serialize_with = "round6")]
    pub sensitivity: f64,
    #[serde(serialize_with = "round6")]
    pub specificity: f64,
}

impl MetricSummary {
    fn of(m: &MetricsReport) -> Self {
        MetricSummary { accuracy: m.accuracy, auc: m.auc, sensitivity: m.sensitivity, specificity: m.specificity }
    }

    fn map(rows: &[MetricSummary], f: impl Fn(&[f64]) -> f64) -> Self {
        let col = |g: fn(&MetricSummary) -> f64| f(&rows.iter().map(g).collect::<Vec<_>>());
        MetricSummary {
            accuracy: col(|m| m.accuracy),
            auc: col(|m| m.auc),
            sensitivity: col(|m| m.sensitivity),
            specificity: col(|m| m.specificity),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for a single value.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub method: String,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    pub per_seed: Vec<SeedArm>,
}

impl ArmReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.metrics.accuracy).collect()
    }
}

/// Aggregated comparison of every arm over the configured seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub aggregation: String,
    pub std_convention: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmReport>,
    pub per_seed: Vec<SeedOutcome>,
}

impl ExperimentReport {
    pub fn arm(&self, method: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.method == method)
    }

    /// Pretty JSON; contains no timestamps, so equal inputs give equal bytes.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,metric,mean,std\n");
        for a in &self.arms {
            for (name, m, s) in [
                ("accuracy", a.mean.accuracy, a.std.accuracy),
                ("auc", a.mean.auc, a.std.auc),
                ("sensitivity", a.mean.sensitivity, a.std.sensitivity),
                ("specificity", a.mean.specificity, a.std.specificity),
            ] {
                out.push_str(&format!("{},{name},{m:.6},{s:.6}\n", a.method));
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.arms.iter().map(|a| a.method.len()).max().unwrap_or(6).max(6);
        let mut out = format!(
            "{:<width$}  {:>17}  {:>17}  {:>17}  {:>17}\n",
            "method", "accuracy", "auc", "sensitivity", "specificity"
        );
        for a in &self.arms {
            let cell = |m: f64, s: f64| format!("{m:.4} ± {s:.4}");
            out.push_str(&format!(
                "{:<width$}  {:>17}  {:>17}  {:>17}  {:>17}\n",
                a.method,
                cell(a.mean.accuracy, a.std.accuracy),
                cell(a.mean.auc, a.std.auc),
                cell(a.mean.sensitivity, a.std.sensitivity),
                cell(a.mean.specificity, a.std.specificity),
            ));
        }
        out.push_str(&format!("{} seeds; {}\n", self.seeds.len(), self.aggregation));
        out
    }
}

fn evaluate_arm(
    cfg: &ExperimentConfig,
    task: &SyntheticTask,
    checksum: &str,
    seed: u64,
    mask: &SelectionMask,
) -> Result<SeedArm> {
    let (extra, labels) = mask.gather(&task.pool);
    let rng = RngStream::new(seed, StreamId::Classifier);
    let (reward, metrics) = evaluate_selection(&task.train, &extra, &labels, &task.val, &task.test, &cfg.classifier, &rng)?;
    Ok(SeedArm {
        method: mask.method.clone(),
        seed,
        task_checksum: checksum.to_string(),
        reward,
        selected_per_class: mask.counts(),
        corrupted_fraction: mask.corrupted_fraction(&task.pool),
        metrics,
    })
}

/// Runs every arm on one generated task.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, log: Option<&mut dyn std::io::Write>) -> Result<SeedOutcome> {
    cfg.validate()?;
    let task = generate_synthetic_task(&cfg.task, seed)?;
    let checksum = task.checksum();
    let centroids = compute_centroids(&task.train)?;
    let counts = task.train_counts();
    let k = task.pool.class_count();

    let none = SelectionMask::empty("none", k);
    let random = select_random(&task.pool, &counts, cfg.ratio, &mut RngStream::new(seed, StreamId::Selection))?;
    let centroid = select_by_centroid_distance(&task.pool, &centroids, &counts, cfg.ratio, cfg.band, cfg.fill_order)?;
    let oracle = select_oracle(&task.pool, &centroids, &counts, cfg.ratio)?;
    let rl = run_experiment(cfg, &task, seed, log)?;

    let mut arms = Vec::with_capacity(5);
    for mask in [&none, &random, &centroid, &oracle, &rl.mask] {
        arms.push(evaluate_arm(cfg, &task, &checksum, seed, mask)?);
    }
    let full = SelectionMask::new("pool", None, (0..k).map(|c| (0..task.pool.class_size(c)).collect()).collect());
    Ok(SeedOutcome {
        seed,
        task_checksum: checksum,
        pool_corrupted_fraction: task.pool.corrupted_fraction().unwrap_or(0.0),
        rl_keep_rate: rl.keep_rate(task.pool.total()),
        reward_trace: rl.log.iter().map(|l| l.mean_reward).collect(),
        selected_trace: rl.log.iter().map(|l| l.selected_per_class.iter().sum()).collect(),
        rl_histogram: distance_histogram(&rl.mask, &task.pool, &centroids, cfg.histogram_bins)?,
        pool_histogram: distance_histogram(&full, &task.pool, &centroids, cfg.histogram_bins)?,
        arms,
    })
}

/// Merges per-seed outcomes, in the given order, into a report.
pub fn assemble_report(outcomes: Vec<SeedOutcome>) -> Result<ExperimentReport> {
    let first = outcomes.first().ok_or_else(|| Error::Validation("no seed outcomes to assemble".into()))?;
    let methods: Vec<String> = first.arms.iter().map(|a| a.method.clone()).collect();
    let mut arms = Vec::with_capacity(methods.len());
    for (j, method) in methods.iter().enumerate() {
        let per_seed: Vec<SeedArm> = outcomes
            .iter()
            .map(|o| {
                o.arms
                    .get(j)
                    .filter(|a| &a.method == method)
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("seed {} lacks arm {method}", o.seed)))
            })
            .collect::<Result<_>>()?;
        let rows: Vec<MetricSummary> = per_seed.iter().map(|s| MetricSummary::of(&s.metrics)).collect();
        arms.push(ArmReport {
            method: method.clone(),
            mean: MetricSummary::map(&rows, mean),
            std: MetricSummary::map(&rows, std_dev),
            per_seed,
        });
    }
    Ok(ExperimentReport {
        aggregation: first.arms[0].metrics.aggregation.clone(),
        std_convention: "sample (n-1)".into(),
        seeds: outcomes.iter().map(|o| o.seed).collect(),
        arms,
        per_seed: outcomes,
    })
}

/// Runs every configured seed in order and aggregates the arms.
pub fn compare_methods(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let outcomes = cfg.seeds.iter().map(|&s| run_seed(cfg, s, None)).collect::<Result<Vec<_>>>()?;
    assemble_report(outcomes)
}
