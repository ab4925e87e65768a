//! Loss components and their analytic gradients.
//!
//! Distance-based terms (inter, intra, ABR, pairwise-intra) are averaged per
//! attribute over the anchors that have a complete term, then summed over
//! attributes. Gradients use subgradient 0 at hinge kinks (`z <= 0`) and at
//! coincident embeddings (`d == 0`).

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::mining::DistanceMatrix;
use crate::types::{ConfigError, Quintuplet};

/// Probability clamp applied before the logarithms of the CE loss.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("probabilities are {probs:?} but labels are {labels:?}")]
    Shape {
        probs: (usize, usize),
        labels: (usize, usize),
    },
    #[error("empty batch")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("iteration {iter} outside [0, {total}]")]
pub struct ScheduleError {
    pub iter: u64,
    pub total: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginSet {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl MarginSet {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self, ConfigError> {
        if !(alpha2 > 0.0 && alpha1 > alpha2 && alpha1.is_finite()) {
            return Err(ConfigError::MarginOrder { alpha1, alpha2 });
        }
        if !(alpha3 > 0.0 && alpha3.is_finite()) {
            return Err(ConfigError::Alpha3(alpha3));
        }
        Ok(Self {
            alpha1,
            alpha2,
            alpha3,
        })
    }
}

impl Default for MarginSet {
    fn default() -> Self {
        Self {
            alpha1: 0.3,
            alpha2: 0.1,
            alpha3: 5.0,
        }
    }
}

/// Gradients of a scalar loss with respect to the forward outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    /// One `B × D` matrix per attribute.
    pub d_embeddings: Vec<Matrix>,
    /// `B × M`, with respect to pre-sigmoid logits.
    pub d_logits: Matrix,
}

impl GradientSet {
    pub fn zeros(batch: usize, embed_dim: usize, num_attrs: usize) -> Self {
        Self {
            d_embeddings: (0..num_attrs)
                .map(|_| Matrix::zeros(batch, embed_dim))
                .collect(),
            d_logits: Matrix::zeros(batch, num_attrs),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_logits.is_finite() && self.d_embeddings.iter().all(Matrix::is_finite)
    }

    /// Adds `scale * grads` into the embedding gradients.
    pub fn add_embedding_grads(&mut self, grads: &[Matrix], scale: f64) {
        for (dst, src) in self.d_embeddings.iter_mut().zip(grads) {
            for (d, s) in dst.as_mut_slice().iter_mut().zip(src.as_slice()) {
                *d += scale * s;
            }
        }
    }
}

#[inline]
pub fn hinge(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CeOutput {
    pub value: f64,
    /// Number of (sample, attribute) terms.
    pub count: usize,
    /// `(p - y) / N`, gradient with respect to the logits.
    pub d_logits: Matrix,
}

/// Binary cross-entropy summed over attributes and averaged over samples.
pub fn ce_loss(probs: &Matrix, labels: &Matrix) -> Result<CeOutput, LossError> {
    if probs.shape() != labels.shape() {
        return Err(LossError::Shape {
            probs: probs.shape(),
            labels: labels.shape(),
        });
    }
    let n = probs.rows();
    if n == 0 {
        return Err(LossError::Empty);
    }
    let inv_n = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut d_logits = Matrix::zeros(n, probs.cols());
    for ((&p, &y), g) in probs
        .as_slice()
        .iter()
        .zip(labels.as_slice())
        .zip(d_logits.as_mut_slice())
    {
        let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        sum += y * libm::log(pc) + (1.0 - y) * libm::log(1.0 - pc);
        *g = (p - y) * inv_n;
    }
    Ok(CeOutput {
        value: -sum * inv_n,
        count: probs.as_slice().len(),
        d_logits,
    })
}

/// The quantities a distance-based loss term needs from one mined batch.
#[derive(Clone, Copy, Debug)]
pub struct MinedBatch<'a> {
    /// One `B × D` matrix per attribute.
    pub embeddings: &'a [Matrix],
    pub dists: &'a [DistanceMatrix],
    pub quints: &'a [Quintuplet],
}

impl<'a> MinedBatch<'a> {
    pub fn new(embeddings: &'a [Matrix], dists: &'a [DistanceMatrix], quints: &'a [Quintuplet]) -> Self {
        assert_eq!(embeddings.len(), dists.len(), "one distance matrix per attribute");
        Self {
            embeddings,
            dists,
            quints,
        }
    }
}

/// Value, valid-term count and embedding gradient of one loss component.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub value: f64,
    pub count: usize,
    pub grads: Vec<Matrix>,
}

impl Component {
    pub fn zero_like(embeddings: &[Matrix]) -> Self {
        Self {
            value: 0.0,
            count: 0,
            grads: embeddings
                .iter()
                .map(|e| Matrix::zeros(e.rows(), e.cols()))
                .collect(),
        }
    }
}

/// `constant + Σ coeff · d(anchor, other)` before the hinge.
struct Term {
    anchor: usize,
    parts: [(usize, f64); 2],
    len: usize,
    constant: f64,
}

impl Term {
    fn one(anchor: usize, other: usize, coeff: f64, constant: f64) -> Self {
        Self {
            anchor,
            parts: [(other, coeff), (other, 0.0)],
            len: 1,
            constant,
        }
    }

    fn two(anchor: usize, pos: usize, neg: usize, constant: f64) -> Self {
        Self {
            anchor,
            parts: [(pos, 1.0), (neg, -1.0)],
            len: 2,
            constant,
        }
    }
}

fn hinge_component(mined: &MinedBatch<'_>, term_for: impl Fn(&Quintuplet) -> Option<Term>) -> Component {
    let mut out = Component::zero_like(mined.embeddings);
    let num_attrs = mined.embeddings.len();
    let mut terms: Vec<Vec<Term>> = (0..num_attrs).map(|_| Vec::new()).collect();
    for q in mined.quints {
        if let Some(t) = term_for(q) {
            terms[q.attr].push(t);
        }
    }
    for (j, attr_terms) in terms.iter().enumerate() {
        if attr_terms.is_empty() {
            continue;
        }
        let dist = &mined.dists[j];
        let emb = &mined.embeddings[j];
        let grad = &mut out.grads[j];
        let inv = 1.0 / attr_terms.len() as f64;
        let mut sum = 0.0;
        for t in attr_terms {
            let parts = &t.parts[..t.len];
            let z = t.constant
                + parts
                    .iter()
                    .map(|&(o, c)| c * dist.get(t.anchor, o))
                    .sum::<f64>();
            if z <= 0.0 {
                continue;
            }
            sum += z;
            for &(o, c) in parts {
                let d = dist.get(t.anchor, o);
                if d == 0.0 {
                    continue;
                }
                let scale = c * inv / d;
                for k in 0..emb.cols() {
                    let diff = emb[(t.anchor, k)] - emb[(o, k)];
                    grad[(t.anchor, k)] += scale * diff;
                    grad[(o, k)] -= scale * diff;
                }
            }
        }
        out.value += sum * inv;
        out.count += attr_terms.len();
    }
    out
}

/// Hinge of `d(a, p3) - d(a, n) + alpha1`.
pub fn inter_loss(mined: &MinedBatch<'_>, alpha1: f64) -> Component {
    hinge_component(mined, |q| match (q.p3, q.n) {
        (Some(p3), Some(n)) => Some(Term::two(q.anchor, p3, n, alpha1)),
        _ => None,
    })
}

/// Hinge of `d(a, p1) - d(a, p2) + alpha2`.
pub fn intra_loss(mined: &MinedBatch<'_>, alpha2: f64) -> Component {
    hinge_component(mined, |q| match (q.p1, q.p2) {
        (Some(p1), Some(p2)) => Some(Term::two(q.anchor, p1, p2, alpha2)),
        _ => None,
    })
}

/// Absolute boundary regularization: hinge of `alpha3 - d(a, n)`.
pub fn abr_loss(mined: &MinedBatch<'_>, alpha3: f64) -> Component {
    hinge_component(mined, |q| q.n.map(|n| Term::one(q.anchor, n, -1.0, alpha3)))
}

/// Same-identity compactness only: hinge of `d(a, p1) - margin`.
pub fn pairwise_intra_loss(mined: &MinedBatch<'_>, margin: f64) -> Component {
    hinge_component(mined, |q| q.p1.map(|p1| Term::one(q.anchor, p1, 1.0, -margin)))
}

/// The three HFE parts, kept apart for reporting and ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct HfeParts {
    pub inter: Component,
    pub intra: Component,
    pub abr: Component,
}

impl HfeParts {
    pub fn value(&self) -> f64 {
        self.inter.value + self.intra.value + self.abr.value
    }
}

pub fn hfe_loss(mined: &MinedBatch<'_>, margins: &MarginSet) -> HfeParts {
    HfeParts {
        inter: inter_loss(mined, margins.alpha1),
        intra: intra_loss(mined, margins.alpha2),
        abr: abr_loss(mined, margins.alpha3),
    }
}

/// Cosine ramp of the HFE weight: `[cos((T - iter) / T · π) / 2 + 1/2] · w0`.
pub fn dynamic_weight(iter: u64, total: u64, w0: f64) -> Result<f64, ScheduleError> {
    if total == 0 || iter > total {
        return Err(ScheduleError { iter, total });
    }
    let phase = (total - iter) as f64 / total as f64;
    Ok((0.5 * libm::cos(phase * PI) + 0.5) * w0)
}

#[inline]
pub fn total_loss(ce: f64, hfe: f64, w: f64) -> f64 {
    ce + w * hfe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::pairwise_distances;
    use alloc::vec;

    fn one_attr(rows: &[[f64; 1]], q: Quintuplet) -> (Vec<Matrix>, Vec<DistanceMatrix>, Vec<Quintuplet>) {
        let e = Matrix::from_rows(rows);
        let d = pairwise_distances(&e).unwrap();
        (vec![e], vec![d], vec![q])
    }

    fn quint(p1: Option<usize>, p2: Option<usize>, p3: Option<usize>, n: Option<usize>) -> Quintuplet {
        Quintuplet {
            attr: 0,
            anchor: 0,
            p1,
            p2,
            p3,
            n,
        }
    }

    #[test]
    fn hinge_values() {
        assert_eq!(hinge(-0.3), 0.0);
        assert_eq!(hinge(0.0), 0.0);
        assert_eq!(hinge(0.7), 0.7);
    }

    #[test]
    fn ce_half_probabilities() {
        let probs = Matrix::from_rows(&[[0.5, 0.5]]);
        let labels = Matrix::from_rows(&[[1.0, 0.0]]);
        let out = ce_loss(&probs, &labels).unwrap();
        assert!((out.value - 2.0 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((out.value - 1.3863).abs() < 1e-4);
        assert_eq!(out.d_logits.row(0), &[-0.5, 0.5]);
    }

    #[test]
    fn ce_perfect_predictions_clamped() {
        let probs = Matrix::from_rows(&[[1.0, 0.0, 1.0]]);
        let labels = Matrix::from_rows(&[[1.0, 0.0, 1.0]]);
        let out = ce_loss(&probs, &labels).unwrap();
        assert!(out.value.is_finite());
        assert!(out.value <= 3.0 * 1e-11);
    }

    #[test]
    fn ce_shape_mismatch() {
        let probs = Matrix::zeros(2, 2);
        let labels = Matrix::zeros(2, 3);
        assert!(matches!(ce_loss(&probs, &labels), Err(LossError::Shape { .. })));
    }

    #[test]
    fn inter_examples() {
        // d(a,p3)=0.1, d(a,n)=0.9
        let (e, d, q) = one_attr(&[[0.0], [0.1], [0.9]], quint(None, None, Some(1), Some(2)));
        assert_eq!(inter_loss(&MinedBatch::new(&e, &d, &q), 0.3).value, 0.0);
        // d(a,p3)=d(a,n)=0.5
        let (e, d, q) = one_attr(&[[0.0], [0.5], [-0.5]], quint(None, None, Some(1), Some(2)));
        let c = inter_loss(&MinedBatch::new(&e, &d, &q), 0.3);
        assert!((c.value - 0.3).abs() < 1e-15);
        assert_eq!(c.count, 1);
    }

    #[test]
    fn intra_examples() {
        let (e, d, q) = one_attr(&[[0.0], [0.05], [0.5]], quint(Some(1), Some(2), None, None));
        assert_eq!(intra_loss(&MinedBatch::new(&e, &d, &q), 0.1).value, 0.0);
        let (e, d, q) = one_attr(&[[0.0], [0.4], [0.2]], quint(Some(1), Some(2), None, None));
        let v = intra_loss(&MinedBatch::new(&e, &d, &q), 0.1).value;
        assert!((v - 0.3).abs() < 1e-15, "{v}");
    }

    #[test]
    fn abr_examples() {
        let (e, d, q) = one_attr(&[[0.0], [5.0]], quint(None, None, None, Some(1)));
        assert_eq!(abr_loss(&MinedBatch::new(&e, &d, &q), 5.0).value, 0.0);
        let (e, d, q) = one_attr(&[[0.0], [4.0]], quint(None, None, None, Some(1)));
        assert_eq!(abr_loss(&MinedBatch::new(&e, &d, &q), 5.0).value, 1.0);
    }

    #[test]
    fn pairwise_intra_examples() {
        let (e, d, q) = one_attr(&[[0.0], [0.05]], quint(Some(1), None, None, None));
        assert_eq!(pairwise_intra_loss(&MinedBatch::new(&e, &d, &q), 0.1).value, 0.0);
        let (e, d, q) = one_attr(&[[0.0], [0.4]], quint(Some(1), None, None, None));
        let v = pairwise_intra_loss(&MinedBatch::new(&e, &d, &q), 0.1).value;
        assert!((v - 0.3).abs() < 1e-15);
    }

    #[test]
    fn incomplete_anchors_are_skipped() {
        let (e, d, q) = one_attr(&[[0.0], [0.4]], quint(Some(1), None, None, None));
        let mined = MinedBatch::new(&e, &d, &q);
        let c = inter_loss(&mined, 0.3);
        assert_eq!((c.value, c.count), (0.0, 0));
        assert_eq!(intra_loss(&mined, 0.1).count, 0);
    }

    #[test]
    fn coincident_embeddings_have_zero_gradient() {
        let (e, d, q) = one_attr(&[[1.0], [1.0]], quint(None, None, None, Some(1)));
        let c = abr_loss(&MinedBatch::new(&e, &d, &q), 5.0);
        assert_eq!(c.value, 5.0);
        assert!(c.grads[0].as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn hfe_sum_example() {
        // inter 0.3, intra 0.3, abr 1.0 on one anchor
        let e = vec![Matrix::from_rows(&[[0.0], [0.5], [0.5], [0.2], [4.0]])];
        let d = vec![pairwise_distances(&e[0]).unwrap()];
        // inter: d(a,p3)=4 - d(a,n)=4 -> use separate quintuplets for each part
        let qs = vec![
            quint(Some(1), Some(3), Some(4), Some(4)),
        ];
        let parts = hfe_loss(&MinedBatch::new(&e, &d, &qs), &MarginSet::default());
        // inter: 4 - 4 + 0.3 = 0.3 ; intra: 0.5 - 0.2 + 0.1 = 0.4 ; abr: 5 - 4 = 1
        assert!((parts.inter.value - 0.3).abs() < 1e-15);
        assert!((parts.intra.value - 0.4).abs() < 1e-15);
        assert_eq!(parts.abr.value, 1.0);
        assert_eq!(parts.value(), parts.inter.value + parts.intra.value + parts.abr.value);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(dynamic_weight(0, 100, 1.0).unwrap(), 0.0);
        assert_eq!(dynamic_weight(100, 100, 1.0).unwrap(), 1.0);
        assert_eq!(dynamic_weight(50, 100, 1.0).unwrap(), 0.5);
        assert_eq!(dynamic_weight(50, 100, 3.0).unwrap(), 1.5);
        assert_eq!(
            dynamic_weight(101, 100, 1.0),
            Err(ScheduleError { iter: 101, total: 100 })
        );
        assert!(dynamic_weight(0, 0, 1.0).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.0, 0.0, 7.0), 1.0);
        assert_eq!(total_loss(1.0, 2.0, 0.5), 2.0);
    }

    #[test]
    fn margin_set_rejects_inverted_margins() {
        assert!(MarginSet::new(0.1, 0.3, 5.0).is_err());
        assert!(MarginSet::new(0.3, 0.1, 0.0).is_err());
        assert!(MarginSet::new(0.3, 0.1, 5.0).is_ok());
    }
}
