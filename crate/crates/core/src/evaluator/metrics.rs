use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

fn round6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((x * 1e6).round() / 1e6)
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One-vs-rest figures for a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub support: usize,
    #[serde(serialize_with = "round6")]
    pub auc: f64,
    #[serde(serialize_with = "round6")]
    pub sensitivity: f64,
    #[serde(serialize_with = "round6")]
    pub specificity: f64,
}

/// Test-set summary. With more than two classes AUC, sensitivity and
/// specificity are macro one-vs-rest averages; with two classes class 1 is
/// the positive class and the figures are its direct TPR, TNR and AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(serialize_with = "round6")]
    pub accuracy: f64,
    #[serde(serialize_with = "round6")]
    pub auc: f64,
    #[serde(serialize_with = "round6")]
    pub sensitivity: f64,
    #[serde(serialize_with = "round6")]
    pub specificity: f64,
    pub aggregation: String,
    pub n_test: usize,
    pub per_class: Vec<ClassMetrics>,
    /// Classes left out of the averages because no test sample has them
    /// (or every test sample has them).
    pub excluded_classes: Vec<usize>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Mann-Whitney AUC with mid-ranks for ties.
fn binary_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = mid;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = scores.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(positive).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

pub fn compute_metrics(scores: &Matrix, labels: &[usize]) -> Result<MetricsReport> {
    let (n, k) = scores.shape();
    if n == 0 || labels.len() != n {
        return Err(Error::Validation(format!("{n} score rows for {} labels", labels.len())));
    }
    if k < 2 {
        return Err(Error::Validation("metrics need at least two classes".into()));
    }
    for (r, row) in scores.iter_rows().enumerate() {
        let s: f64 = row.iter().sum();
        if !row.iter().all(|p| p.is_finite() && *p >= 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("score row {r} is not a probability vector")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Validation(format!("label {bad} outside {k} score columns")));
    }

    let predicted: Vec<usize> = scores.iter_rows().map(argmax).collect();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&y, &p) in labels.iter().zip(&predicted) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();

    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..k {
        let support = labels.iter().filter(|&&l| l == c).count();
        if support == 0 || support == n {
            excluded.push(c);
            continue;
        }
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let column: Vec<f64> = scores.iter_rows().map(|r| r[c]).collect();
        let tp = confusion[c][c];
        let fp: usize = (0..k).filter(|&t| t != c).map(|t| confusion[t][c]).sum();
        let negatives = n - support;
        per_class.push(ClassMetrics {
            class: c,
            support,
            auc: binary_auc(&column, &positive),
            sensitivity: tp as f64 / support as f64,
            specificity: (negatives - fp) as f64 / negatives as f64,
        });
    }
    if per_class.is_empty() {
        return Err(Error::Validation("labels contain a single class; one-vs-rest metrics are undefined".into()));
    }
    let (auc, sensitivity, specificity, aggregation) = if k == 2 {
        // both classes are present once anything survived exclusion
        let m = &per_class[1];
        (m.auc, m.sensitivity, m.specificity, "binary-class-1-positive")
    } else {
        let mean = |f: fn(&ClassMetrics) -> f64| {
            per_class.iter().map(f).sum::<f64>() / per_class.len() as f64
        };
        (mean(|m| m.auc), mean(|m| m.sensitivity), mean(|m| m.specificity), "macro-one-vs-rest")
    };
    Ok(MetricsReport {
        accuracy: correct as f64 / n as f64,
        auc,
        sensitivity,
        specificity,
        aggregation: aggregation.into(),
        n_test: n,
        per_class,
        excluded_classes: excluded,
        confusion,
    })
}
