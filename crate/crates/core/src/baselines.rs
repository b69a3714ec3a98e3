//! Non-learned selection strategies: uniform random, centroid-distance band
//! and the truth-flag oracle.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::{CandidatePool, ClassCentroids, Quality};
use crate::numkit::{Matrix, RngStream};

/// Selected candidate indices, per class and in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionMask {
    pub method: String,
    pub ratio: Option<f64>,
    pub per_class: Vec<Vec<usize>>,
}

impl SelectionMask {
    /// Sorts and deduplicates the indices.
    pub fn new(method: impl Into<String>, ratio: Option<f64>, per_class: Vec<Vec<usize>>) -> Self {
        let per_class = per_class
            .into_iter()
            .map(|v| v.into_iter().collect::<BTreeSet<_>>().into_iter().collect())
            .collect();
        SelectionMask { method: method.into(), ratio, per_class }
    }

    pub fn empty(method: impl Into<String>, classes: usize) -> Self {
        SelectionMask::new(method, None, vec![Vec::new(); classes])
    }

    pub fn total(&self) -> usize {
        self.per_class.iter().map(Vec::len).sum()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.per_class.iter().map(Vec::len).collect()
    }

    pub fn validate(&self, pool: &CandidatePool) -> Result<()> {
        if self.per_class.len() != pool.class_count() {
            return Err(Error::Validation(format!(
                "mask covers {} classes, pool has {}",
                self.per_class.len(),
                pool.class_count()
            )));
        }
        for (c, idx) in self.per_class.iter().enumerate() {
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(format!("class {c} indices are not unique and sorted")));
            }
            if let Some(&i) = idx.iter().find(|&&i| i >= pool.class_size(c)) {
                return Err(Error::Validation(format!(
                    "class {c} index {i} outside pool of {}",
                    pool.class_size(c)
                )));
            }
        }
        Ok(())
    }

    /// Features and labels of the selected candidates, class by class.
    pub fn gather(&self, pool: &CandidatePool) -> (Matrix, Vec<usize>) {
        let mut data = Vec::with_capacity(self.total() * pool.dim());
        let mut labels = Vec::with_capacity(self.total());
        for (c, idx) in self.per_class.iter().enumerate() {
            for &i in idx {
                data.extend_from_slice(pool.candidate(c, i));
                labels.push(c);
            }
        }
        let n = labels.len();
        (Matrix::new(n, pool.dim(), data).expect("gathered rows have pool width"), labels)
    }

    /// Share of selected candidates flagged corrupted; `None` without truth
    /// flags or with an empty mask.
    pub fn corrupted_fraction(&self, pool: &CandidatePool) -> Option<f64> {
        let truth = pool.truth()?;
        if self.total() == 0 {
            return None;
        }
        let bad = self
            .per_class
            .iter()
            .enumerate()
            .map(|(c, idx)| idx.iter().filter(|&&i| truth[c][i] == Quality::Corrupted).count())
            .sum::<usize>();
        Some(bad as f64 / self.total() as f64)
    }
}

/// Candidates requested for one class: `⌈ratio · train count⌉`, capped at
/// the pool size.
pub fn requested(ratio: f64, train_count: usize, pool_size: usize) -> usize {
    // the small offset keeps 0.3 · 10 from rounding up to 4
    let want = (ratio * train_count as f64 - 1e-9).ceil().max(0.0) as usize;
    want.min(pool_size)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("augmentation ratio {ratio} outside (0, 1]")))
    }
}

fn check_counts(pool: &CandidatePool, train_counts: &[usize]) -> Result<()> {
    if train_counts.len() != pool.class_count() {
        return Err(Error::Validation(format!(
            "{} training counts for {} pool classes",
            train_counts.len(),
            pool.class_count()
        )));
    }
    Ok(())
}

/// Uniform sampling without replacement, per class.
pub fn select_random(
    pool: &CandidatePool,
    train_counts: &[usize],
    ratio: f64,
    rng: &mut RngStream,
) -> Result<SelectionMask> {
    check_ratio(ratio)?;
    check_counts(pool, train_counts)?;
    let per_class = (0..pool.class_count())
        .map(|c| {
            let size = pool.class_size(c);
            sample(rng, size, requested(ratio, train_counts[c], size)).into_vec()
        })
        .collect();
    Ok(SelectionMask::new("random", Some(ratio), per_class))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillOrder {
    /// Ascending distance to the class centroid.
    #[default]
    NearestFirst,
    /// Ascending distance to the middle of the percentile band.
    BandCenterFirst,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Indices of one class ordered by `key`, ties broken by index.
fn order_by(values: &[f64], key: impl Fn(f64) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| key(values[a]).total_cmp(&key(values[b])).then(a.cmp(&b)));
    idx
}

/// Keeps candidates inside the `(p_low, p_high)` distance percentile band
/// and fills the request from it.
pub fn select_by_centroid_distance(
    pool: &CandidatePool,
    centroids: &ClassCentroids,
    train_counts: &[usize],
    ratio: f64,
    band: (f64, f64),
    fill: FillOrder,
) -> Result<SelectionMask> {
    check_ratio(ratio)?;
    check_counts(pool, train_counts)?;
    let (lo, hi) = band;
    if !(0.0 <= lo && lo < hi && hi <= 100.0) {
        return Err(Error::Config(format!("percentile band ({lo}, {hi}) is not within 0 <= low < high <= 100")));
    }
    let mut per_class = Vec::with_capacity(pool.class_count());
    for c in 0..pool.class_count() {
        let size = pool.class_size(c);
        let want = requested(ratio, train_counts[c], size);
        if want == 0 {
            per_class.push(Vec::new());
            continue;
        }
        let dist = centroids.pool_distances(pool, c)?;
        let mut sorted = dist.clone();
        sorted.sort_by(f64::total_cmp);
        let (d_lo, d_hi) = (percentile(&sorted, lo), percentile(&sorted, hi));
        let centre = 0.5 * (d_lo + d_hi);
        let order = match fill {
            FillOrder::NearestFirst => order_by(&dist, |d| d),
            FillOrder::BandCenterFirst => order_by(&dist, |d| (d - centre).abs()),
        };
        let chosen: Vec<usize> = order
            .into_iter()
            .filter(|&i| dist[i] >= d_lo && dist[i] <= d_hi)
            .take(want)
            .collect();
        if chosen.is_empty() {
            return Err(Error::Validation(format!(
                "percentile band ({lo}, {hi}) leaves class {c} empty; widen the band"
            )));
        }
        per_class.push(chosen);
    }
    Ok(SelectionMask::new("centroid", Some(ratio), per_class))
}

/// Clean-flagged candidates, nearest to the centroid first.
pub fn select_oracle(
    pool: &CandidatePool,
    centroids: &ClassCentroids,
    train_counts: &[usize],
    ratio: f64,
) -> Result<SelectionMask> {
    check_ratio(ratio)?;
    check_counts(pool, train_counts)?;
    let truth = pool
        .truth()
        .ok_or_else(|| Error::Validation("oracle selection needs truth flags".into()))?;
    let mut per_class = Vec::with_capacity(pool.class_count());
    for c in 0..pool.class_count() {
        let want = requested(ratio, train_counts[c], pool.class_size(c));
        let dist = centroids.pool_distances(pool, c)?;
        let chosen = order_by(&dist, |d| d)
            .into_iter()
            .filter(|&i| truth[c][i] == Quality::Clean)
            .take(want)
            .collect();
        per_class.push(chosen);
    }
    Ok(SelectionMask::new("oracle", Some(ratio), per_class))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::featurestore::{compute_centroids, FeatureSet, Provenance, SplitRole};
    use crate::numkit::StreamId;

    /// One class whose centroid is the x axis; candidate `i` sits at angle
    /// `angles[i]` so its cosine distance is `1 − cos(angle)`.
    fn angled_pool(angles: &[f64], truth: Option<Vec<Quality>>) -> (CandidatePool, ClassCentroids) {
        let train = FeatureSet::new(Matrix::row_vector(&[1.0, 0.0]), vec![0], 1, SplitRole::Train).unwrap();
        let cands = Matrix::from_fn(angles.len(), 2, |r, c| if c == 0 { angles[r].cos() } else { angles[r].sin() });
        let provenance = if truth.is_some() { Provenance::SyntheticBenchmark } else { Provenance::External };
        let pool = CandidatePool::new(vec![cands], truth.map(|t| vec![t]), provenance).unwrap();
        (pool, compute_centroids(&train).unwrap())
    }

    /// Angles whose cosine distances are exactly `d`.
    fn angles_for(d: &[f64]) -> Vec<f64> {
        d.iter().map(|d| (1.0 - d).acos()).collect()
    }

    fn gaussian_pool(per_class: usize, seed: u64) -> (CandidatePool, ClassCentroids) {
        let mut rng = RngStream::new(seed, StreamId::DataGen);
        let mut gen = |n: usize, c: usize| Matrix::from_fn(n, 3, |_, j| if j == c { 3.0 } else { 0.0 } + rng.uniform());
        let train_rows = gen(4, 0).vstack(&gen(4, 1)).unwrap();
        let train = FeatureSet::new(train_rows, vec![0, 0, 0, 0, 1, 1, 1, 1], 2, SplitRole::Train).unwrap();
        let truth = (0..2)
            .map(|_| (0..per_class).map(|i| if i % 3 == 0 { Quality::Corrupted } else { Quality::Clean }).collect())
            .collect();
        let pool = CandidatePool::new(vec![gen(per_class, 0), gen(per_class, 1)], Some(truth), Provenance::SyntheticBenchmark)
            .unwrap();
        (pool, compute_centroids(&train).unwrap())
    }

    #[test]
    fn request_counts() {
        assert_eq!(requested(0.5, 60, 256), 30);
        assert_eq!(requested(0.5, 61, 256), 31);
        assert_eq!(requested(0.3, 10, 256), 3);
        assert_eq!(requested(1.0, 60, 20), 20);
    }

    #[test]
    fn random_full_request_takes_the_pool() {
        let (pool, _) = gaussian_pool(5, 1);
        let mut rng = RngStream::new(4, StreamId::Selection);
        let mask = select_random(&pool, &[5, 5], 1.0, &mut rng).unwrap();
        assert_eq!(mask.per_class, vec![vec![0, 1, 2, 3, 4]; 2]);
    }

    #[test]
    fn random_seeds_differ_and_repeat() {
        let (pool, _) = gaussian_pool(40, 1);
        let draw = |s| select_random(&pool, &[20, 20], 0.5, &mut RngStream::new(s, StreamId::Selection)).unwrap();
        for s in 0..10 {
            assert_ne!(draw(s), draw(s + 100));
            assert_eq!(draw(s), draw(s));
        }
        assert!(matches!(
            select_random(&pool, &[20, 20], 0.0, &mut RngStream::new(0, StreamId::Selection)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn band_hand_case() {
        let (pool, cen) = angled_pool(&angles_for(&[0.1, 0.2, 0.3, 0.4, 0.5]), None);
        // band (20, 80) keeps distances in [0.18, 0.42]
        let mask = select_by_centroid_distance(&pool, &cen, &[4], 0.5, (20.0, 80.0), FillOrder::NearestFirst).unwrap();
        assert_eq!(mask.per_class, vec![vec![1, 2]]);
        let centre = select_by_centroid_distance(&pool, &cen, &[2], 0.5, (20.0, 80.0), FillOrder::BandCenterFirst).unwrap();
        assert_eq!(centre.per_class, vec![vec![2]]);
    }

    #[test]
    fn full_band_is_nearest_first() {
        let (pool, cen) = angled_pool(&angles_for(&[0.4, 0.1, 0.3, 0.05, 0.2]), None);
        let mask = select_by_centroid_distance(&pool, &cen, &[6], 0.5, (0.0, 100.0), FillOrder::NearestFirst).unwrap();
        assert_eq!(mask.per_class, vec![vec![1, 3, 4]]);
    }

    #[test]
    fn narrow_band_that_empties_a_class_is_an_error() {
        let (pool, cen) = angled_pool(&angles_for(&[0.1, 0.5]), None);
        let err = select_by_centroid_distance(&pool, &cen, &[2], 0.5, (40.0, 60.0), FillOrder::NearestFirst);
        assert!(matches!(err, Err(Error::Validation(_))));
        let bad_band = select_by_centroid_distance(&pool, &cen, &[2], 0.5, (60.0, 40.0), FillOrder::NearestFirst);
        assert!(matches!(bad_band, Err(Error::Config(_))));
    }

    #[test]
    fn zero_request_is_empty() {
        let (pool, cen) = angled_pool(&angles_for(&[0.1, 0.5]), None);
        let mask = select_by_centroid_distance(&pool, &cen, &[0], 0.5, (40.0, 60.0), FillOrder::NearestFirst).unwrap();
        assert_eq!(mask.total(), 0);
    }

    #[test]
    fn oracle_cases() {
        let d = [0.3, 0.1, 0.2, 0.4];
        let (all_bad, cen) = angled_pool(&angles_for(&d), Some(vec![Quality::Corrupted; 4]));
        assert_eq!(select_oracle(&all_bad, &cen, &[8], 0.5).unwrap().total(), 0);

        let (clean, cen) = angled_pool(&angles_for(&d), Some(vec![Quality::Clean; 4]));
        let oracle = select_oracle(&clean, &cen, &[4], 0.5).unwrap();
        let band = select_by_centroid_distance(&clean, &cen, &[4], 0.5, (0.0, 100.0), FillOrder::NearestFirst).unwrap();
        assert_eq!(oracle.per_class, band.per_class);

        let (plain, cen) = angled_pool(&angles_for(&d), None);
        assert!(matches!(select_oracle(&plain, &cen, &[4], 0.5), Err(Error::Validation(_))));
    }

    #[test]
    fn oracle_never_selects_corrupted() {
        let (pool, cen) = gaussian_pool(30, 2);
        let mask = select_oracle(&pool, &cen, &[30, 30], 1.0).unwrap();
        assert_eq!(mask.corrupted_fraction(&pool), Some(0.0));
        assert_eq!(mask.counts(), vec![20, 20]);
    }

    #[test]
    fn mask_json_round_trip_and_gather() {
        let (pool, cen) = gaussian_pool(10, 3);
        let mask = select_oracle(&pool, &cen, &[4, 4], 0.5).unwrap();
        let back: SelectionMask = serde_json::from_str(&serde_json::to_string(&mask).unwrap()).unwrap();
        assert_eq!(back, mask);
        let (x, y) = mask.gather(&pool);
        assert_eq!(x.rows(), 4);
        assert_eq!(y, vec![0, 0, 1, 1]);
        assert_eq!(x.row(2), pool.candidate(1, mask.per_class[1][0]));
    }

    proptest! {
        #[test]
        fn masks_are_valid(seed in 0u64..500, ratio in 0.05f64..1.0, n in 1usize..25) {
            let (pool, cen) = gaussian_pool(n, seed);
            let counts = [n / 2 + 1, n];
            let mut rng = RngStream::new(seed, StreamId::Selection);
            let masks = [
                select_random(&pool, &counts, ratio, &mut rng).unwrap(),
                select_by_centroid_distance(&pool, &cen, &counts, ratio, (0.0, 100.0), FillOrder::NearestFirst).unwrap(),
                select_oracle(&pool, &cen, &counts, ratio).unwrap(),
            ];
            for m in &masks {
                prop_assert!(m.validate(&pool).is_ok());
                for c in 0..2 {
                    prop_assert!(m.per_class[c].len() <= requested(ratio, counts[c], n));
                }
            }
        }

        #[test]
        fn centroid_selection_is_permutation_invariant(seed in 0u64..500, shift in 1usize..11) {
            let (pool, cen) = gaussian_pool(11, seed);
            let perm: Vec<usize> = (0..11).map(|i| (i + shift) % 11).collect();
            let shuffled: Vec<Matrix> = (0..2).map(|c| pool.class(c).select_rows(&perm)).collect();
            let truth = pool.truth().map(|t| t.iter().map(|v| perm.iter().map(|&i| v[i]).collect()).collect());
            let other = CandidatePool::new(shuffled, truth, pool.provenance()).unwrap();
            let a = select_by_centroid_distance(&pool, &cen, &[8, 8], 0.5, (10.0, 90.0), FillOrder::NearestFirst).unwrap();
            let b = select_by_centroid_distance(&other, &cen, &[8, 8], 0.5, (10.0, 90.0), FillOrder::NearestFirst).unwrap();
            for c in 0..2 {
                let mut mapped: Vec<usize> = b.per_class[c].iter().map(|&i| perm[i]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(&mapped, &a.per_class[c]);
            }
        }
    }
}
