use serde::{Deserialize, Serialize};

use super::{CandidatePool, ClassCentroids};
use crate::error::{Error, Result};
use crate::numkit::Matrix;

/// Direction in which sorted candidates are assigned to batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchOrder {
    /// Smallest centroid distance first.
    #[default]
    NearFirst,
    FarFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub class: usize,
    pub index: usize,
    pub distance: f64,
}

/// Candidates split into ordered batches. Each batch holds a contiguous
/// chunk of every class's distance-sorted list, interleaved round-robin
/// across classes in class-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<BatchEntry>>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn total(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Splits every batch into one batch per class, so each controller
    /// sequence contains a single class.
    pub fn split_by_class(&self, class_count: usize) -> BatchPlan {
        let mut batches = Vec::new();
        for b in &self.batches {
            for c in 0..class_count {
                let part: Vec<BatchEntry> = b.iter().copied().filter(|e| e.class == c).collect();
                if !part.is_empty() {
                    batches.push(part);
                }
            }
        }
        BatchPlan { batches }
    }

    /// Feature rows and classes of one batch, in sequence order.
    pub fn materialize(&self, batch: usize, pool: &CandidatePool) -> (Matrix, Vec<usize>) {
        let entries = &self.batches[batch];
        let mut m = Matrix::zeros(entries.len(), pool.dim());
        for (r, e) in entries.iter().enumerate() {
            m.row_mut(r).copy_from_slice(pool.candidate(e.class, e.index));
        }
        (m, entries.iter().map(|e| e.class).collect())
    }
}

/// Sorts each class's candidates by cosine distance to its centroid (ties
/// by candidate index) and deals them into `batch_count` balanced chunks.
/// The last batch takes any remainder.
pub fn build_batches(
    pool: &CandidatePool,
    centroids: &ClassCentroids,
    batch_count: usize,
    order: BatchOrder,
) -> Result<BatchPlan> {
    if batch_count == 0 {
        return Err(Error::Validation("batch count must be at least 1".into()));
    }
    if centroids.class_count() != pool.class_count() {
        return Err(Error::Validation(format!(
            "{} centroids for a pool of {} classes",
            centroids.class_count(),
            pool.class_count()
        )));
    }
    let mut chunks: Vec<Vec<Vec<BatchEntry>>> = Vec::with_capacity(pool.class_count());
    for c in 0..pool.class_count() {
        let m = pool.class_size(c);
        if m < batch_count {
            return Err(Error::Validation(format!(
                "class {c} has {m} candidates, fewer than {batch_count} batches"
            )));
        }
        let distances = centroids.pool_distances(pool, c)?;
        let mut entries: Vec<BatchEntry> = distances
            .into_iter()
            .enumerate()
            .map(|(index, distance)| BatchEntry { class: c, index, distance })
            .collect();
        entries.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
        if order == BatchOrder::FarFirst {
            // reverse the distance order but keep index ascending within ties
            entries.sort_by(|a, b| b.distance.total_cmp(&a.distance).then(a.index.cmp(&b.index)));
        }
        let base = m / batch_count;
        let mut per_batch = Vec::with_capacity(batch_count);
        let mut rest = entries.as_slice();
        for b in 0..batch_count {
            let take = if b + 1 == batch_count { rest.len() } else { base };
            let (head, tail) = rest.split_at(take);
            per_batch.push(head.to_vec());
            rest = tail;
        }
        chunks.push(per_batch);
    }

    let batches = (0..batch_count)
        .map(|b| {
            let longest = chunks.iter().map(|c| c[b].len()).max().unwrap_or(0);
            let mut seq = Vec::new();
            for i in 0..longest {
                for class_chunks in &chunks {
                    if let Some(e) = class_chunks[b].get(i) {
                        seq.push(*e);
                    }
                }
            }
            seq
        })
        .collect();
    Ok(BatchPlan { batches })
}
