use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::featurestore::{CandidatePool, FeatureSet, Provenance, Quality, SplitRole};
use crate::numkit::{Matrix, RngStream, StreamId};

/// How a corrupted candidate of class `c` is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CorruptionModel {
    /// From the distribution of a uniformly chosen other class.
    LabelFlip,
    /// From a Gaussian whose mean is moved `magnitude` of the way from `μ_c`
    /// to `μ_{(c+1) mod k}`.
    MeanShift { magnitude: f64 },
    /// From `N(μ_c, (factor·σ)² I)`.
    NoiseInflation { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Pairwise distance between class means.
    pub separation: f64,
    pub within_std: f64,
    pub pool_per_class: usize,
    pub corruption_rate: f64,
    pub corruption: CorruptionModel,
    /// Used when a task is generated on its own; experiments use their
    /// per-run seeds instead.
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            classes: 4,
            dim: 16,
            train_per_class: 10,
            val_per_class: 100,
            test_per_class: 100,
            separation: 3.0,
            within_std: 1.0,
            pool_per_class: 20,
            corruption_rate: 0.5,
            corruption: CorruptionModel::MeanShift { magnitude: 0.5 },
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("task needs at least two classes, got {}", self.classes));
        }
        if self.dim == 0 || self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return bad("task dimensions and split sizes must be positive".into());
        }
        if self.pool_per_class == 0 {
            return bad("candidate pool must be non-empty".into());
        }
        if self.classes > self.dim + 1 {
            return bad(format!(
                "{} equidistant class means do not fit in {} dimensions",
                self.classes, self.dim
            ));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return bad(format!("corruption rate {} outside [0, 1]", self.corruption_rate));
        }
        if !(self.separation >= 0.0 && self.within_std > 0.0) {
            return bad("separation must be non-negative and within-class std positive".into());
        }
        match self.corruption {
            CorruptionModel::MeanShift { magnitude } if !magnitude.is_finite() => bad("mean shift must be finite".into()),
            CorruptionModel::NoiseInflation { factor } if !(factor > 0.0) => bad("noise factor must be positive".into()),
            _ => Ok(()),
        }
    }
}

/// Class means at pairwise distance `separation`: the centred standard basis
/// of `R^k`, orthonormalised into `k − 1` coordinates and zero-padded to `dim`.
pub fn simplex_means(classes: usize, dim: usize, separation: f64) -> Result<Matrix> {
    if classes > dim + 1 {
        return Err(Error::Config(format!(
            "{classes} equidistant class means do not fit in {dim} dimensions"
        )));
    }
    let k = classes;
    let centred: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| f64::from(u8::from(i == j)) - 1.0 / k as f64).collect())
        .collect();
    // Gram-Schmidt over the first k − 1 centred vectors spans their subspace
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in centred.iter().take(k - 1) {
        let mut u = v.clone();
        for b in &basis {
            let proj: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(u.into_iter().map(|x| x / norm).collect());
    }
    let scale = separation / std::f64::consts::SQRT_2;
    Ok(Matrix::from_fn(k, dim, |i, j| {
        if j < basis.len() {
            scale * centred[i].iter().zip(&basis[j]).map(|(x, y)| x * y).sum::<f64>()
        } else {
            0.0
        }
    }))
}

/// Splits and candidate pool of one benchmark instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub train: FeatureSet,
    pub val: FeatureSet,
    pub test: FeatureSet,
    pub pool: CandidatePool,
    pub means: Matrix,
}

impl SyntheticTask {
    /// SHA-256 over every feature value, label and truth flag.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for set in [&self.train, &self.val, &self.test] {
            for x in set.features().data() {
                h.update(x.to_le_bytes());
            }
            for &l in set.labels() {
                h.update((l as u64).to_le_bytes());
            }
        }
        for c in 0..self.pool.class_count() {
            for x in self.pool.class(c).data() {
                h.update(x.to_le_bytes());
            }
        }
        if let Some(truth) = self.pool.truth() {
            for q in truth.iter().flatten() {
                h.update([u8::from(*q == Quality::Corrupted)]);
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_counts(&self) -> Vec<usize> {
        self.train.class_counts()
    }
}

fn gaussian_rows(n: usize, mean: &[f64], std: f64, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(n, mean.len(), |_, j| {
        let z: f64 = rng.sample(StandardNormal);
        mean[j] + std * z
    })
}

fn split(cfg: &TaskConfig, means: &Matrix, per_class: usize, role: SplitRole, rng: &mut RngStream) -> Result<FeatureSet> {
    let mut data = Matrix::zeros(0, cfg.dim);
    let mut labels = Vec::with_capacity(cfg.classes * per_class);
    for c in 0..cfg.classes {
        data = data.vstack(&gaussian_rows(per_class, means.row(c), cfg.within_std, rng))?;
        labels.extend(std::iter::repeat_n(c, per_class));
    }
    FeatureSet::new(data, labels, cfg.classes, role)
}

/// Draws train, validation and test splits plus a candidate pool in which
/// `round(rate · pool size)` candidates per class are corrupted.
pub fn generate_synthetic_task(cfg: &TaskConfig, seed: u64) -> Result<SyntheticTask> {
    cfg.validate()?;
    let means = simplex_means(cfg.classes, cfg.dim, cfg.separation)?;
    let mut rng = RngStream::new(seed, StreamId::DataGen);
    let train = split(cfg, &means, cfg.train_per_class, SplitRole::Train, &mut rng)?;
    let val = split(cfg, &means, cfg.val_per_class, SplitRole::Validation, &mut rng)?;
    let test = split(cfg, &means, cfg.test_per_class, SplitRole::Test, &mut rng)?;

    let n = cfg.pool_per_class;
    let bad = (cfg.corruption_rate * n as f64).round() as usize;
    let mut per_class = Vec::with_capacity(cfg.classes);
    let mut truth = Vec::with_capacity(cfg.classes);
    for c in 0..cfg.classes {
        let mut flags: Vec<Quality> = (0..n).map(|i| if i < bad { Quality::Corrupted } else { Quality::Clean }).collect();
        flags.shuffle(&mut rng);
        let mut rows = Matrix::zeros(n, cfg.dim);
        for (i, q) in flags.iter().enumerate() {
            let own = means.row(c);
            let row = match (q, cfg.corruption) {
                (Quality::Clean, _) => gaussian_rows(1, own, cfg.within_std, &mut rng),
                (Quality::Corrupted, CorruptionModel::LabelFlip) => {
                    let other = (c + 1 + rng.random_range(0..cfg.classes - 1)) % cfg.classes;
                    gaussian_rows(1, means.row(other), cfg.within_std, &mut rng)
                }
                (Quality::Corrupted, CorruptionModel::MeanShift { magnitude }) => {
                    let next = means.row((c + 1) % cfg.classes);
                    let shifted: Vec<f64> = own.iter().zip(next).map(|(a, b)| a + magnitude * (b - a)).collect();
                    gaussian_rows(1, &shifted, cfg.within_std, &mut rng)
                }
                (Quality::Corrupted, CorruptionModel::NoiseInflation { factor }) => {
                    gaussian_rows(1, own, factor * cfg.within_std, &mut rng)
                }
            };
            rows.row_mut(i).copy_from_slice(row.row(0));
        }
        per_class.push(rows);
        truth.push(flags);
    }
    let pool = CandidatePool::new(per_class, Some(truth), Provenance::SyntheticBenchmark)?;
    Ok(SyntheticTask { train, val, test, pool, means })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{train_classifier, ClassifierConfig};

    fn small() -> TaskConfig {
        TaskConfig {
            classes: 3,
            dim: 4,
            train_per_class: 10,
            val_per_class: 5,
            test_per_class: 7,
            pool_per_class: 12,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn simplex_means_are_equidistant() {
        for (k, d) in [(2, 1), (3, 2), (4, 16), (5, 4)] {
            let m = simplex_means(k, d, 2.5).unwrap();
            for i in 0..k {
                for j in 0..i {
                    let dist: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    assert!((dist - 2.5).abs() < 1e-12, "{k} {d}: {dist}");
                }
            }
        }
        assert!(matches!(simplex_means(5, 3, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn shapes_and_truth_flags() {
        let t = generate_synthetic_task(&small(), 1).unwrap();
        assert_eq!((t.train.len(), t.val.len(), t.test.len()), (30, 15, 21));
        assert_eq!(t.pool.total(), 36);
        assert_eq!(t.pool.corrupted_fraction(), Some(0.5));
        let clean = generate_synthetic_task(&TaskConfig { corruption_rate: 0.0, ..small() }, 1).unwrap();
        assert_eq!(clean.pool.corrupted_fraction(), Some(0.0));
    }

    #[test]
    fn same_seed_is_bit_exact() {
        let a = generate_synthetic_task(&small(), 5).unwrap();
        let b = generate_synthetic_task(&small(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.checksum(), b.checksum());
        let c = generate_synthetic_task(&small(), 6).unwrap();
        assert_ne!(a.checksum(), c.checksum());
    }

    #[test]
    fn corruption_models_move_candidates() {
        let mean_dist = |t: &SyntheticTask, want: Quality| {
            let truth = t.pool.truth().unwrap();
            let mut total = 0.0;
            let mut n = 0.0;
            for c in 0..t.pool.class_count() {
                for i in 0..t.pool.class_size(c) {
                    if truth[c][i] == want {
                        let x = t.pool.candidate(c, i);
                        total += x.iter().zip(t.means.row(c)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                        n += 1.0;
                    }
                }
            }
            total / n
        };
        let base = TaskConfig { pool_per_class: 200, separation: 6.0, ..small() };
        for model in [
            CorruptionModel::LabelFlip,
            CorruptionModel::MeanShift { magnitude: 0.8 },
            CorruptionModel::NoiseInflation { factor: 3.0 },
        ] {
            let t = generate_synthetic_task(&TaskConfig { corruption: model, ..base.clone() }, 2).unwrap();
            assert!(mean_dist(&t, Quality::Corrupted) > 1.5 * mean_dist(&t, Quality::Clean), "{model:?}");
        }
    }

    #[test]
    fn zero_separation_gives_chance_accuracy() {
        let cfg = TaskConfig { separation: 0.0, train_per_class: 60, val_per_class: 200, ..TaskConfig::default() };
        let mut acc = 0.0;
        for seed in 0..5 {
            let t = generate_synthetic_task(&cfg, seed).unwrap();
            let curve = train_classifier(&t.train, &t.test, &ClassifierConfig::default(), &mut RngStream::new(seed, StreamId::Classifier)).unwrap();
            acc += curve.val_accuracy.last().unwrap() / 5.0;
        }
        assert!((acc - 0.25).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn config_errors() {
        assert!(TaskConfig { classes: 6, dim: 4, ..small() }.validate().is_err());
        assert!(TaskConfig { corruption_rate: 1.5, ..small() }.validate().is_err());
        let json = r#"{"classes": 3, "corruption": {"kind": "mean-shift", "magnitude": 0.5}}"#;
        let cfg: TaskConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.corruption, CorruptionModel::MeanShift { magnitude: 0.5 });
        assert!(serde_json::from_str::<TaskConfig>(r#"{"clases": 3}"#).is_err());
    }
}
