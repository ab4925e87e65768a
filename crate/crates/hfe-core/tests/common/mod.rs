#![allow(dead_code)]

use hfe_core::{Batch, HfeRng, Matrix, Quintuplet, Sample};

pub fn brute_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc.sqrt()
}

pub fn random_matrix(rng: &mut HfeRng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform(-scale, scale)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Small integer coordinates, so equal distances are common.
pub fn grid_matrix(rng: &mut HfeRng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.below(3) as f64).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Batch of `b` samples over `n_ids` identities with identity-consistent labels.
pub fn random_batch(rng: &mut HfeRng, b: usize, m: usize, n_ids: usize, feature_dim: usize) -> Batch {
    let labels: Vec<Vec<u8>> = (0..n_ids)
        .map(|_| (0..m).map(|_| rng.below(2) as u8).collect())
        .collect();
    let samples = (0..b)
        .map(|_| {
            let id = rng.below(n_ids);
            let features = (0..feature_dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
            Sample::new(features, labels[id].clone(), id as u64)
        })
        .collect();
    Batch::from_samples(samples).unwrap()
}

fn first_extreme(emb: &Matrix, anchor: usize, cands: &[usize], farthest: bool) -> Option<usize> {
    let dists: Vec<f64> = cands
        .iter()
        .map(|&i| brute_distance(emb.row(anchor), emb.row(i)))
        .collect();
    let target = if farthest {
        dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        dists.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    cands
        .iter()
        .zip(&dists)
        .filter(|(_, &d)| d == target)
        .map(|(&i, _)| i)
        .min()
}

/// Exhaustive-scan quintuplet: build each candidate set, find the extreme
/// distance, then take the lowest index reaching it.
pub fn oracle_quintuplet(emb: &Matrix, attr: usize, labels: &[u8], ids: &[u64], anchor: usize) -> Quintuplet {
    let others: Vec<usize> = (0..labels.len()).filter(|&i| i != anchor).collect();
    let pick = |pred: &dyn Fn(usize) -> bool, farthest: bool| {
        let cands: Vec<usize> = others.iter().copied().filter(|&i| pred(i)).collect();
        first_extreme(emb, anchor, &cands, farthest)
    };
    let same = |i: usize| labels[i] == labels[anchor];
    let same_id = |i: usize| ids[i] == ids[anchor];
    Quintuplet {
        attr,
        anchor,
        p1: pick(&|i| same(i) && same_id(i), true),
        p2: pick(&|i| same(i) && !same_id(i), false),
        p3: pick(&|i| same(i) && !same_id(i), true),
        n: pick(&|i| !same(i), false),
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Smallest |hinge argument| over every loss term, quintuplets held fixed.
pub fn kink_gap(
    emb: &[Matrix],
    quints: &[Quintuplet],
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
) -> f64 {
    let mut gap = f64::INFINITY;
    for q in quints {
        let e = &emb[q.attr];
        let d = |i: Option<usize>| i.map(|i| brute_distance(e.row(q.anchor), e.row(i)));
        if let (Some(p3), Some(n)) = (d(q.p3), d(q.n)) {
            gap = gap.min((p3 - n + alpha1).abs());
        }
        if let (Some(p1), Some(p2)) = (d(q.p1), d(q.p2)) {
            gap = gap.min((p1 - p2 + alpha2).abs());
        }
        if let Some(p1) = d(q.p1) {
            gap = gap.min((p1 - alpha2).abs()).min(p1);
        }
        if let Some(n) = d(q.n) {
            gap = gap.min((alpha3 - n).abs());
        }
    }
    gap
}
