//! Evaluation: class-based and instance-based attribute metrics, embedding
//! diagnostics and a deterministic 2-D PCA projection.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::mining::{pairwise_distances, select_quintuplet, MiningError};

/// Probability at or above which an attribute is predicted present.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("predictions are {preds:?} but labels are {labels:?}")]
    Shape {
        preds: (usize, usize),
        labels: (usize, usize),
    },
    #[error("nothing to evaluate")]
    Empty,
    #[error("projection needs at least 2 rows (got {0})")]
    TooFewRows(usize),
    #[error(transparent)]
    Mining(#[from] MiningError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub class_based_per_attr: Vec<f64>,
    pub class_based_avg: f64,
    pub instance_acc: f64,
    pub instance_prec: f64,
    pub instance_recall: f64,
    pub instance_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBased {
    pub per_attr: Vec<f64>,
    pub avg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceBased {
    pub acc: f64,
    pub prec: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Thresholds a `B × M` probability matrix at [`THRESHOLD`].
pub fn predictions(probs: &Matrix) -> Vec<Vec<u8>> {
    (0..probs.rows())
        .map(|i| probs.row(i).iter().map(|&p| u8::from(p >= THRESHOLD)).collect())
        .collect()
}

fn check_shapes(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<usize, EvalError> {
    let m = labels.first().ok_or(EvalError::Empty)?.len();
    let pm = preds.first().map_or(0, Vec::len);
    let bad = preds.len() != labels.len()
        || preds.iter().any(|r| r.len() != m)
        || labels.iter().any(|r| r.len() != m);
    if bad {
        return Err(EvalError::Shape {
            preds: (preds.len(), pm),
            labels: (labels.len(), m),
        });
    }
    if m == 0 {
        return Err(EvalError::Empty);
    }
    Ok(m)
}

/// Per-attribute accuracy and its unweighted mean.
pub fn class_based_metrics(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<ClassBased, EvalError> {
    let m = check_shapes(preds, labels)?;
    let b = labels.len() as f64;
    let per_attr: Vec<f64> = (0..m)
        .map(|j| {
            let correct = preds.iter().zip(labels).filter(|(p, y)| p[j] == y[j]).count();
            correct as f64 / b
        })
        .collect();
    let avg = per_attr.iter().sum::<f64>() / m as f64;
    Ok(ClassBased { per_attr, avg })
}

fn ratio(num: usize, den: usize, both_empty: bool) -> f64 {
    if den == 0 {
        if both_empty {
            1.0
        } else {
            0.0
        }
    } else {
        num as f64 / den as f64
    }
}

/// Sample-averaged Jaccard accuracy, precision and recall over positive
/// attributes; F1 from the averaged precision and recall.
///
/// A ratio with an empty denominator set counts 1 when predicted and true
/// positive sets are both empty, otherwise 0.
pub fn instance_based_metrics(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<InstanceBased, EvalError> {
    check_shapes(preds, labels)?;
    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    for (p, y) in preds.iter().zip(labels) {
        let (mut tp, mut pp, mut tpos, mut union) = (0, 0, 0, 0);
        for (&a, &b) in p.iter().zip(y) {
            let (a, b) = (a == 1, b == 1);
            tp += usize::from(a && b);
            pp += usize::from(a);
            tpos += usize::from(b);
            union += usize::from(a || b);
        }
        let both_empty = pp == 0 && tpos == 0;
        acc += ratio(tp, union, both_empty);
        prec += ratio(tp, pp, both_empty);
        rec += ratio(tp, tpos, both_empty);
    }
    let n = labels.len() as f64;
    let (acc, prec, recall) = (acc / n, prec / n, rec / n);
    Ok(InstanceBased {
        acc,
        prec,
        recall,
        f1: f1_score(prec, recall),
    })
}

pub fn f1_score(prec: f64, recall: f64) -> f64 {
    if prec + recall > 0.0 {
        2.0 * prec * recall / (prec + recall)
    } else {
        0.0
    }
}

pub fn metric_report(preds: &[Vec<u8>], labels: &[Vec<u8>]) -> Result<MetricReport, EvalError> {
    let c = class_based_metrics(preds, labels)?;
    let i = instance_based_metrics(preds, labels)?;
    Ok(MetricReport {
        class_based_per_attr: c.per_attr,
        class_based_avg: c.avg,
        instance_acc: i.acc,
        instance_prec: i.prec,
        instance_recall: i.recall,
        instance_f1: i.f1,
    })
}

/// Embedding-space structure of one attribute.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean distance over pairs with the same identity.
    pub mean_intra_id_dist: f64,
    /// Mean distance over pairs with the same attribute value and different identities.
    pub mean_intra_class_dist: f64,
    /// Mean distance over pairs with different attribute values.
    pub mean_inter_class_dist: f64,
    /// Fraction of anchors whose mined quintuplet is complete and strictly
    /// ordered: `d(a,p1) < d(a,p2) < d(a,p3) < d(a,n)`.
    pub quintuplet_order_rate: f64,
}

/// Per-attribute diagnostics; `attrs[i][j]` is sample `i`'s label for
/// attribute `j`. Empty pair sets give a mean of 0.
pub fn embedding_diagnostics(
    embeddings_per_attr: &[Matrix],
    attrs: &[Vec<u8>],
    ids: &[u64],
) -> Result<Vec<Diagnostics>, EvalError> {
    let b = ids.len();
    if b == 0 {
        return Err(EvalError::Empty);
    }
    embeddings_per_attr
        .iter()
        .enumerate()
        .map(|(j, emb)| {
            if emb.rows() != b || attrs.len() != b {
                return Err(EvalError::Shape {
                    preds: emb.shape(),
                    labels: (attrs.len(), ids.len()),
                });
            }
            let dist = pairwise_distances(emb)?;
            let labels: Vec<u8> = attrs.iter().map(|a| a[j]).collect();
            let mut sums = [0.0f64; 3];
            let mut counts = [0usize; 3];
            for i in 0..b {
                for k in (i + 1)..b {
                    let slot = if labels[i] != labels[k] {
                        2
                    } else if ids[i] == ids[k] {
                        0
                    } else {
                        1
                    };
                    sums[slot] += dist.get(i, k);
                    counts[slot] += 1;
                }
            }
            let mean = |s: usize| if counts[s] == 0 { 0.0 } else { sums[s] / counts[s] as f64 };
            let ordered = (0..b)
                .filter(|&a| {
                    let q = select_quintuplet(&dist, j, &labels, ids, a);
                    match (q.p1, q.p2, q.p3, q.n) {
                        (Some(p1), Some(p2), Some(p3), Some(n)) => {
                            let d = |x| dist.get(a, x);
                            d(p1) < d(p2) && d(p2) < d(p3) && d(p3) < d(n)
                        }
                        _ => false,
                    }
                })
                .count();
            Ok(Diagnostics {
                mean_intra_id_dist: mean(0),
                mean_intra_class_dist: mean(1),
                mean_inter_class_dist: mean(2),
                quintuplet_order_rate: ordered as f64 / b as f64,
            })
        })
        .collect()
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order (ties keep the lower original
/// index first) and the matching unit eigenvectors as the columns of the
/// second matrix. Each eigenvector is signed so that its largest-magnitude
/// coordinate (lowest index on ties) is positive.
pub fn symmetric_eigen(sym: &Matrix) -> (Vec<f64>, Matrix) {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "symmetric_eigen needs a square matrix");
    let mut a = sym.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v[(i, i)] = 1.0;
    }
    let scale: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| a[(i, k)] * a[(i, k)])
            .sum();
        if off <= 1e-30 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    -1.0 / (-theta + libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(y, y)].total_cmp(&a[(x, x)]).then(x.cmp(&y)));
    let values = order.iter().map(|&k| a[(k, k)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        let mut lead = 0;
        for r in 1..n {
            if libm::fabs(v[(r, k)]) > libm::fabs(v[(lead, k)]) {
                lead = r;
            }
        }
        let s = if v[(lead, k)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, col)] = s * v[(r, k)];
        }
    }
    (values, vectors)
}

/// Mean-centred, sample-covariance (`1/(B-1)`) PCA projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// `B × 2` scores on the first two principal components.
    pub coords: Matrix,
    /// `D × 2` principal axes.
    pub axes: Matrix,
    pub mean: Vec<f64>,
    /// Eigenvalues of all components, descending.
    pub variances: Vec<f64>,
}

/// Projects `B × D` embeddings onto their top two principal components.
/// One-dimensional input gets a zero second coordinate.
pub fn project_2d(embeddings: &Matrix) -> Result<Projection, EvalError> {
    let (b, d) = embeddings.shape();
    if b < 2 {
        return Err(EvalError::TooFewRows(b));
    }
    let mut mean = embeddings.column_sums();
    for v in mean.iter_mut() {
        *v /= b as f64;
    }
    let mut centered = embeddings.clone();
    for i in 0..b {
        for (x, mu) in centered.row_mut(i).iter_mut().zip(&mean) {
            *x -= mu;
        }
    }
    let mut cov = centered.transpose_matmul(&centered);
    for v in cov.as_mut_slice() {
        *v /= (b - 1) as f64;
    }
    let (variances, vectors) = symmetric_eigen(&cov);
    let mut axes = Matrix::zeros(d, 2);
    for r in 0..d {
        for c in 0..d.min(2) {
            axes[(r, c)] = vectors[(r, c)];
        }
    }
    let mut coords = Matrix::zeros(b, 2);
    for i in 0..b {
        for c in 0..2 {
            coords[(i, c)] = (0..d).map(|r| centered[(i, r)] * axes[(r, c)]).sum();
        }
    }
    Ok(Projection {
        coords,
        axes,
        mean,
        variances,
    })
}
