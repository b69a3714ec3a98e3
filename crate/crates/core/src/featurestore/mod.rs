//! Labeled feature sets, synthetic candidate pools, class centroids and the
//! distance-sorted batch plan consumed by the controller.

mod batches;
mod io;

use serde::{Deserialize, Serialize};

pub use batches::{build_batches, BatchEntry, BatchOrder, BatchPlan};
pub use io::{load_features, read_binary, read_csv, save_features, write_binary, write_csv};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
}

/// Feature vectors with class labels for one data split.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
    role: SplitRole,
}

impl FeatureSet {
    pub fn new(features: Matrix, labels: Vec<usize>, class_count: usize, role: SplitRole) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Validation("feature set has no rows".into()));
        }
        if features.cols() == 0 {
            return Err(Error::Validation("feature set has zero dimensions".into()));
        }
        if labels.len() != features.rows() {
            return Err(Error::Validation(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= class_count) {
            return Err(Error::Validation(format!(
                "label {l} at row {i} is not below class count {class_count}"
            )));
        }
        features.ensure_finite("feature set")?;
        Ok(FeatureSet {
            features,
            labels,
            class_count,
            role,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_role(mut self, role: SplitRole) -> Self {
        self.role = role;
        self
    }

    /// Number of rows carrying each label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Appends labeled rows, returning a new set with the same role.
    pub fn extended(&self, extra: &Matrix, labels: &[usize]) -> Result<FeatureSet> {
        if extra.rows() == 0 {
            return Ok(self.clone());
        }
        if extra.cols() != self.dim() {
            return Err(Error::dim("extend feature set", self.features.shape(), extra.shape()));
        }
        let features = self.features.vstack(extra)?;
        let mut all = self.labels.clone();
        all.extend_from_slice(labels);
        FeatureSet::new(features, all, self.class_count, self.role)
    }
}

/// Whether a benchmark candidate was drawn from its class distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quality {
    Clean,
    Corrupted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// Generated by the desk benchmark; ground truth is known.
    SyntheticBenchmark,
    /// Loaded from an external feature file.
    External,
}

/// Synthetic candidates grouped by the class they were generated for.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    per_class: Vec<Matrix>,
    truth: Option<Vec<Vec<Quality>>>,
    provenance: Provenance,
}

impl CandidatePool {
    pub fn new(
        per_class: Vec<Matrix>,
        truth: Option<Vec<Vec<Quality>>>,
        provenance: Provenance,
    ) -> Result<Self> {
        if per_class.is_empty() {
            return Err(Error::Validation("candidate pool has no classes".into()));
        }
        let dim = per_class.iter().find(|m| m.rows() > 0).map(|m| m.cols());
        for (c, m) in per_class.iter().enumerate() {
            if m.rows() > 0 && Some(m.cols()) != dim {
                return Err(Error::Validation(format!(
                    "class {c} candidates have dimension {}, expected {}",
                    m.cols(),
                    dim.unwrap_or(0)
                )));
            }
            m.ensure_finite("candidate pool")?;
        }
        match (&truth, provenance) {
            (Some(flags), Provenance::SyntheticBenchmark) => {
                if flags.len() != per_class.len()
                    || flags.iter().zip(&per_class).any(|(f, m)| f.len() != m.rows())
                {
                    return Err(Error::Validation(
                        "truth flags must cover every candidate".into(),
                    ));
                }
            }
            (None, Provenance::External) => {}
            (Some(_), Provenance::External) => {
                return Err(Error::Validation(
                    "truth flags are only valid for synthetic-benchmark pools".into(),
                ))
            }
            (None, Provenance::SyntheticBenchmark) => {
                return Err(Error::Validation(
                    "synthetic-benchmark pools must carry truth flags".into(),
                ))
            }
        }
        Ok(CandidatePool {
            per_class,
            truth,
            provenance,
        })
    }

    /// Groups a labeled feature set into a pool.
    pub fn from_feature_set(set: &FeatureSet, truth: Option<Vec<Vec<Quality>>>) -> Result<Self> {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); set.class_count()];
        for (i, &l) in set.labels().iter().enumerate() {
            rows[l].push(i);
        }
        let per_class = rows.iter().map(|r| set.features().select_rows(r)).collect();
        let provenance = if truth.is_some() {
            Provenance::SyntheticBenchmark
        } else {
            Provenance::External
        };
        CandidatePool::new(per_class, truth, provenance)
    }

    /// All candidates as one labeled set, classes in id order.
    pub fn to_feature_set(&self) -> Result<FeatureSet> {
        let mut features = Matrix::zeros(0, self.dim());
        let mut labels = Vec::new();
        for (c, m) in self.per_class.iter().enumerate() {
            features = features.vstack(m)?;
            labels.extend(std::iter::repeat_n(c, m.rows()));
        }
        FeatureSet::new(features, labels, self.class_count(), SplitRole::Train)
    }

    pub fn class_count(&self) -> usize {
        self.per_class.len()
    }

    pub fn class(&self, c: usize) -> &Matrix {
        &self.per_class[c]
    }

    pub fn class_size(&self, c: usize) -> usize {
        self.per_class[c].rows()
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().map(Matrix::rows).sum()
    }

    pub fn dim(&self) -> usize {
        self.per_class.iter().map(Matrix::cols).max().unwrap_or(0)
    }

    pub fn candidate(&self, c: usize, i: usize) -> &[f64] {
        self.per_class[c].row(i)
    }

    pub fn truth(&self) -> Option<&[Vec<Quality>]> {
        self.truth.as_deref()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Fraction of corrupted candidates, if truth is known.
    pub fn corrupted_fraction(&self) -> Option<f64> {
        let truth = self.truth.as_ref()?;
        let total: usize = truth.iter().map(Vec::len).sum();
        let bad = truth.iter().flatten().filter(|&&q| q == Quality::Corrupted).count();
        Some(bad as f64 / total.max(1) as f64)
    }
}

/// Per-class mean of training features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCentroids {
    pub means: Matrix,
    pub counts: Vec<usize>,
}

impl ClassCentroids {
    pub fn class_count(&self) -> usize {
        self.means.rows()
    }

    pub fn centroid(&self, c: usize) -> &[f64] {
        self.means.row(c)
    }

    /// Cosine distance of every candidate of class `c` to that class centroid.
    pub fn pool_distances(&self, pool: &CandidatePool, c: usize) -> Result<Vec<f64>> {
        let m = pool.class(c);
        (0..m.rows()).map(|i| cosine_distance(m.row(i), self.centroid(c))).collect()
    }
}

pub fn compute_centroids(train: &FeatureSet) -> Result<ClassCentroids> {
    let k = train.class_count();
    let d = train.dim();
    let mut sums = Matrix::zeros(k, d);
    let counts = train.class_counts();
    for (row, &l) in train.features().iter_rows().zip(train.labels()) {
        for (s, &x) in sums.row_mut(l).iter_mut().zip(row) {
            *s += x;
        }
    }
    let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0).collect();
    if !empty.is_empty() {
        return Err(Error::Validation(format!(
            "classes without training samples: {empty:?}"
        )));
    }
    for c in 0..k {
        let n = counts[c] as f64;
        sums.row_mut(c).iter_mut().for_each(|x| *x /= n);
    }
    Ok(ClassCentroids { means: sums, counts })
}

/// `1 - cos(u, v)`, clamped to `[0, 2]`.
///
/// ```
/// use synsel::featurestore::cosine_distance;
/// assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
/// assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
/// ```
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine_distance", (1, u.len()), (1, v.len())));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine distance of a zero-norm vector".into()));
    }
    let cos = crate::numkit::matrix_dot(u, v) / (nu * nv);
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(rows: &[&[f64]], labels: &[usize], k: usize) -> FeatureSet {
        FeatureSet::new(Matrix::from_rows(rows).unwrap(), labels.to_vec(), k, SplitRole::Train).unwrap()
    }

    #[test]
    fn centroid_single_sample_and_midpoint() {
        let s = set(&[&[1.0, 2.0], &[0.0, 0.0], &[2.0, 2.0]], &[0, 1, 1], 2);
        let c = compute_centroids(&s).unwrap();
        assert_eq!(c.centroid(0), &[1.0, 2.0]);
        assert_eq!(c.centroid(1), &[1.0, 1.0]);
        assert_eq!(c.counts, vec![1, 2]);
    }

    #[test]
    fn centroid_empty_class_is_named() {
        let s = set(&[&[1.0], &[2.0]], &[0, 2], 3);
        let err = compute_centroids(&s).unwrap_err().to_string();
        assert!(err.contains("[1]"), "{err}");
    }

    #[test]
    fn centroids_match_brute_force_mean() {
        use rand::Rng;
        let mut rng = crate::numkit::RngStream::new(11, crate::numkit::StreamId::DataGen);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let s = FeatureSet::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), 3, SplitRole::Train).unwrap();
        let c = compute_centroids(&s).unwrap();
        for class in 0..3 {
            for j in 0..4 {
                let members: Vec<f64> = rows.iter().zip(&labels).filter(|(_, &l)| l == class).map(|(r, _)| r[j]).collect();
                let mean = members.iter().sum::<f64>() / members.len() as f64;
                assert!((c.means[(class, j)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_distance_cases() {
        assert!(cosine_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().abs() < 1e-15);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn feature_set_validation() {
        let empty = FeatureSet::new(Matrix::zeros(0, 3), vec![], 2, SplitRole::Train);
        assert!(matches!(empty, Err(Error::Validation(_))));
        let bad = FeatureSet::new(Matrix::zeros(1, 3), vec![2], 2, SplitRole::Train);
        assert!(matches!(bad, Err(Error::Validation(_))));
    }

    #[test]
    fn truth_flags_tied_to_provenance() {
        let m = vec![Matrix::zeros(2, 2)];
        assert!(CandidatePool::new(m.clone(), None, Provenance::SyntheticBenchmark).is_err());
        assert!(CandidatePool::new(m.clone(), Some(vec![vec![Quality::Clean; 2]]), Provenance::External).is_err());
        assert!(CandidatePool::new(m, Some(vec![vec![Quality::Clean; 2]]), Provenance::SyntheticBenchmark).is_ok());
    }

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 5)
            .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(u in nonzero_vec(), v in nonzero_vec(), a in 0.01f64..100.0) {
            let d = cosine_distance(&u, &v).unwrap();
            prop_assert!((d - cosine_distance(&v, &u).unwrap()).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * a).collect();
            prop_assert!((d - cosine_distance(&scaled, &v).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
