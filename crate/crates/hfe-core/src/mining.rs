//! Pairwise distances, batch-hard quintuplet selection and P×K sampling.
//!
//! Selection works on detached distances: it only decides *which* indices
//! enter each loss term. Ties in every argmin/argmax go to the lowest batch
//! index.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::matrix::{euclidean, Matrix};
use crate::rng::HfeRng;
use crate::types::{Batch, BatchError, Quintuplet, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MiningError {
    #[error("embedding entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("expected {expected} embedding matrices (one per attribute), got {found}")]
    AttrCount { expected: usize, found: usize },
    #[error("embedding matrix {attr} has {rows} rows for a batch of {batch}")]
    RowCount {
        attr: usize,
        rows: usize,
        batch: usize,
    },
    #[error("empty embedding matrix")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SampleError {
    #[error("dataset has {available} distinct ids, batch needs {requested}")]
    NotEnoughIds { available: usize, requested: usize },
    #[error("P and K must both be at least 1")]
    ZeroBatch,
    #[error(transparent)]
    Batch(#[from] BatchError),
}

/// Symmetric `B × B` matrix of non-squared Euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    values: Matrix,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.values
    }
}

/// Distances between all rows of `embeddings`. Each pair is computed once and
/// mirrored, so the result is exactly symmetric with a zero diagonal.
pub fn pairwise_distances(embeddings: &Matrix) -> Result<DistanceMatrix, MiningError> {
    let (b, d) = embeddings.shape();
    if b == 0 || d == 0 {
        return Err(MiningError::Empty);
    }
    for row in 0..b {
        if let Some(col) = embeddings.row(row).iter().position(|v| !v.is_finite()) {
            return Err(MiningError::NonFinite { row, col });
        }
    }
    let mut values = Matrix::zeros(b, b);
    for i in 0..b {
        for j in (i + 1)..b {
            let dist = euclidean(embeddings.row(i), embeddings.row(j));
            values[(i, j)] = dist;
            values[(j, i)] = dist;
        }
    }
    Ok(DistanceMatrix { values })
}

#[derive(Clone, Copy)]
enum Pick {
    Nearest,
    Farthest,
}

#[derive(Clone, Copy)]
struct Best {
    pick: Pick,
    found: Option<(usize, f64)>,
}

impl Best {
    fn new(pick: Pick) -> Self {
        Self { pick, found: None }
    }

    // Candidates arrive in increasing index order; strict comparison keeps the
    // lowest index on ties.
    #[inline]
    fn offer(&mut self, idx: usize, dist: f64) {
        let better = match self.found {
            None => true,
            Some((_, cur)) => match self.pick {
                Pick::Nearest => dist < cur,
                Pick::Farthest => dist > cur,
            },
        };
        if better {
            self.found = Some((idx, dist));
        }
    }

    fn index(&self) -> Option<usize> {
        self.found.map(|(i, _)| i)
    }
}

/// Batch-hard quintuplet for `anchor` under one attribute's labels.
///
/// Members whose candidate set is empty are `None`. When exactly one
/// different-identity positive exists, `p2 == p3`.
pub fn select_quintuplet(
    dist: &DistanceMatrix,
    attr: usize,
    attr_labels: &[u8],
    id_labels: &[u64],
    anchor: usize,
) -> Quintuplet {
    let b = dist.len();
    assert!(anchor < b, "anchor {anchor} out of range for batch of {b}");
    assert_eq!(attr_labels.len(), b, "attribute labels misaligned");
    assert_eq!(id_labels.len(), b, "identity labels misaligned");

    let mut p1 = Best::new(Pick::Farthest);
    let mut p2 = Best::new(Pick::Nearest);
    let mut p3 = Best::new(Pick::Farthest);
    let mut n = Best::new(Pick::Nearest);
    let (a_attr, a_id) = (attr_labels[anchor], id_labels[anchor]);
    for i in 0..b {
        if i == anchor {
            continue;
        }
        let d = dist.get(anchor, i);
        if attr_labels[i] != a_attr {
            n.offer(i, d);
        } else if id_labels[i] == a_id {
            p1.offer(i, d);
        } else {
            p2.offer(i, d);
            p3.offer(i, d);
        }
    }
    Quintuplet {
        attr,
        anchor,
        p1: p1.index(),
        p2: p2.index(),
        p3: p3.index(),
        n: n.index(),
    }
}

/// Distance matrices for each attribute's embedding space.
pub fn attribute_distances(embeddings_per_attr: &[Matrix]) -> Result<Vec<DistanceMatrix>, MiningError> {
    embeddings_per_attr.iter().map(pairwise_distances).collect()
}

/// Mines one quintuplet per (attribute, anchor), attribute-major: the entry
/// for attribute `j` and anchor `a` sits at `j * B + a`.
pub fn mine_batch(
    embeddings_per_attr: &[Matrix],
    batch: &Batch,
) -> Result<(Vec<DistanceMatrix>, Vec<Quintuplet>), MiningError> {
    let m = batch.num_attrs();
    if embeddings_per_attr.len() != m {
        return Err(MiningError::AttrCount {
            expected: m,
            found: embeddings_per_attr.len(),
        });
    }
    for (attr, e) in embeddings_per_attr.iter().enumerate() {
        if e.rows() != batch.len() {
            return Err(MiningError::RowCount {
                attr,
                rows: e.rows(),
                batch: batch.len(),
            });
        }
    }
    let dists = attribute_distances(embeddings_per_attr)?;
    let quints = mine_with_distances(&dists, batch);
    Ok((dists, quints))
}

/// [`mine_batch`] on precomputed distances.
pub fn mine_with_distances(dists: &[DistanceMatrix], batch: &Batch) -> Vec<Quintuplet> {
    let ids = batch.ids();
    let mut quints = Vec::with_capacity(dists.len() * batch.len());
    for (j, dist) in dists.iter().enumerate() {
        let labels = batch.attr_column(j);
        quints.extend((0..batch.len()).map(|a| select_quintuplet(dist, j, &labels, &ids, a)));
    }
    quints
}

/// P×K identity-balanced batch.
///
/// Picks `p` distinct identities uniformly (shuffle of the sorted id list),
/// then `k` samples per identity: without replacement when the identity has
/// at least `k` samples, otherwise `k` independent draws with replacement.
/// Samples are grouped by identity in draw order.
pub fn pk_sample(
    dataset: &[Sample],
    p: usize,
    k: usize,
    rng: &mut HfeRng,
) -> Result<Batch, SampleError> {
    if p == 0 || k == 0 {
        return Err(SampleError::ZeroBatch);
    }
    let mut by_id: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        by_id.entry(s.id).or_default().push(i);
    }
    if by_id.len() < p {
        return Err(SampleError::NotEnoughIds {
            available: by_id.len(),
            requested: p,
        });
    }
    let mut groups: Vec<&Vec<usize>> = by_id.values().collect();
    rng.shuffle(&mut groups);

    let mut indices = Vec::with_capacity(p * k);
    for members in groups.into_iter().take(p) {
        if members.len() >= k {
            // Partial Fisher-Yates over a scratch copy.
            let mut pool = members.clone();
            for t in 0..k {
                let j = t + rng.below(pool.len() - t);
                pool.swap(t, j);
                indices.push(pool[t]);
            }
        } else {
            for _ in 0..k {
                indices.push(members[rng.below(members.len())]);
            }
        }
    }
    let samples = indices.iter().map(|&i| dataset[i].clone()).collect();
    Ok(Batch::new(samples, indices)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use alloc::vec;

    #[test]
    fn three_four_five() {
        let e = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]);
        let d = pairwise_distances(&e).unwrap();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn single_row_is_zero() {
        let d = pairwise_distances(&Matrix::from_rows(&[[1.5, -2.0, 3.0]])).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn non_finite_is_rejected() {
        let e = Matrix::from_rows(&[[0.0, f64::NAN]]);
        assert_eq!(
            pairwise_distances(&e),
            Err(MiningError::NonFinite { row: 0, col: 1 })
        );
    }

    #[test]
    fn two_same_id_samples() {
        let d = pairwise_distances(&Matrix::from_rows(&[[0.0], [1.0]])).unwrap();
        let q = select_quintuplet(&d, 0, &[1, 1], &[5, 5], 0);
        assert_eq!(q.p1, Some(1));
        assert_eq!((q.p2, q.p3, q.n), (None, None, None));
    }

    #[test]
    fn unique_attribute_value_leaves_only_negative() {
        let d = pairwise_distances(&Matrix::from_rows(&[[0.0], [2.0], [1.0], [3.0]])).unwrap();
        let q = select_quintuplet(&d, 0, &[1, 0, 0, 0], &[1, 2, 3, 4], 0);
        assert_eq!((q.p1, q.p2, q.p3), (None, None, None));
        assert_eq!(q.n, Some(2));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let d = pairwise_distances(&Matrix::from_rows(&[[0.0], [1.0], [-1.0], [1.0], [-1.0]])).unwrap();
        let q = select_quintuplet(&d, 0, &[1, 1, 1, 0, 0], &[1, 2, 3, 4, 5], 0);
        assert_eq!((q.p2, q.p3, q.n), (Some(1), Some(1), Some(3)));
    }

    #[test]
    fn pk_forced_cases() {
        let data: Vec<Sample> = [(0, 1), (1, 1), (2, 2), (3, 2)]
            .iter()
            .map(|&(f, id)| Sample::new(vec![f as f64], vec![0], id))
            .collect();
        let b = pk_sample(&data, 2, 2, &mut seeded_rng(3)).unwrap();
        let mut idx = b.indices().to_vec();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3]);

        let lone = vec![Sample::new(vec![1.0], vec![1], 9)];
        let b = pk_sample(&lone, 1, 4, &mut seeded_rng(3)).unwrap();
        assert_eq!(b.indices(), &[0, 0, 0, 0]);

        assert_eq!(
            pk_sample(&lone, 2, 1, &mut seeded_rng(3)),
            Err(SampleError::NotEnoughIds {
                available: 1,
                requested: 2
            })
        );
    }
}
