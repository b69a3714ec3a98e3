use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::baselines::SelectionMask;
use crate::error::{Error, Result};
use crate::featurestore::{CandidatePool, ClassCentroids};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub class: usize,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub rows: Vec<HistogramRow>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "class,bin_lo,bin_hi,count")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.class, r.bin_lo, r.bin_hi, r.count)?;
        }
        Ok(())
    }
}

/// Bin of `d` among `bins` equal-width bins over `[lo, hi]`. Bins are closed
/// on the right, and the first bin also holds `lo`.
fn bin_of(d: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    (0..bins).find(|&b| d <= lo + (b + 1) as f64 * width).unwrap_or(bins - 1)
}

/// Per-class counts of selected candidates by centroid distance, with bins
/// spanning that class's full pool so pool and selection share edges.
pub fn distance_histogram(
    mask: &SelectionMask,
    pool: &CandidatePool,
    centroids: &ClassCentroids,
    bins: usize,
) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    mask.validate(pool)?;
    let mut rows = Vec::new();
    for c in 0..pool.class_count() {
        let dist = centroids.pool_distances(pool, c)?;
        let lo = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if dist.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let mut counts = vec![0usize; bins];
        for &i in &mask.per_class[c] {
            counts[bin_of(dist[i], lo, hi, bins)] += 1;
        }
        let width = (hi - lo) / bins as f64;
        for (b, count) in counts.into_iter().enumerate() {
            let bin_hi = if b + 1 == bins { hi } else { lo + (b + 1) as f64 * width };
            rows.push(HistogramRow { class: c, bin_lo: lo + b as f64 * width, bin_hi, count });
        }
    }
    Ok(Histogram { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurestore::{compute_centroids, FeatureSet, Provenance, SplitRole};
    use crate::numkit::Matrix;

    fn pool_with_distances(d: &[f64]) -> (CandidatePool, ClassCentroids) {
        let train = FeatureSet::new(Matrix::row_vector(&[1.0, 0.0]), vec![0], 1, SplitRole::Train).unwrap();
        let cands = Matrix::from_fn(d.len(), 2, |r, c| {
            let a = (1.0 - d[r]).acos();
            if c == 0 { a.cos() } else { a.sin() }
        });
        (CandidatePool::new(vec![cands], None, Provenance::External).unwrap(), compute_centroids(&train).unwrap())
    }

    #[test]
    fn hand_binning() {
        assert_eq!(bin_of(0.1, 0.1, 0.9, 2), 0);
        assert_eq!(bin_of(0.5, 0.1, 0.9, 2), 0);
        assert_eq!(bin_of(0.9, 0.1, 0.9, 2), 1);
        // computed cosine distances carry round-off, so keep them off the edge
        let (pool, cen) = pool_with_distances(&[0.1, 0.45, 0.9]);
        let all = SelectionMask::new("all", None, vec![vec![0, 1, 2]]);
        let h = distance_histogram(&all, &pool, &cen, 2).unwrap();
        let counts: Vec<usize> = h.rows.iter().map(|r| r.count).collect();
        assert_eq!(counts, vec![2, 1]);
    }

    #[test]
    fn single_bin_counts_the_selection() {
        let (pool, cen) = pool_with_distances(&[0.2, 0.3, 0.7, 0.4]);
        let mask = SelectionMask::new("m", None, vec![vec![1, 3]]);
        let h = distance_histogram(&mask, &pool, &cen, 1).unwrap();
        assert_eq!(h.rows.len(), 1);
        assert_eq!(h.rows[0].count, 2);
    }

    #[test]
    fn empty_mask_is_all_zero() {
        let (pool, cen) = pool_with_distances(&[0.2, 0.3, 0.7]);
        let h = distance_histogram(&SelectionMask::empty("none", 1), &pool, &cen, 4).unwrap();
        assert_eq!(h.total(), 0);
        assert_eq!(h.rows.len(), 4);
        assert!(distance_histogram(&SelectionMask::empty("none", 1), &pool, &cen, 0).is_err());
    }

    #[test]
    fn csv_layout() {
        let (pool, cen) = pool_with_distances(&[0.25, 0.75]);
        let h = distance_histogram(&SelectionMask::new("m", None, vec![vec![0, 1]]), &pool, &cen, 2).unwrap();
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "class,bin_lo,bin_hi,count");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,0.25") && lines[1].ends_with(",1"));
    }
}
