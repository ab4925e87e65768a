//! Domain types shared across the crate and dataset validation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One observation: a raw feature vector, binary attribute labels and an identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Binary labels stored as 0/1 bytes. Out-of-range values are reported by
    /// [`validate_dataset`], never coerced.
    pub attrs: Vec<u8>,
    pub id: u64,
}

impl Sample {
    pub fn new(features: Vec<f64>, attrs: Vec<u8>, id: u64) -> Self {
        Self {
            features,
            attrs,
            id,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features.len()
    }

    pub fn num_attrs(&self) -> usize {
        self.attrs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BatchError {
    #[error("batch is empty")]
    Empty,
    #[error("batch sample {index} has shape ({features}, {attrs}), expected ({expected_features}, {expected_attrs})")]
    Shape {
        index: usize,
        features: usize,
        attrs: usize,
        expected_features: usize,
        expected_attrs: usize,
    },
    #[error("batch has {samples} samples but {indices} source indices")]
    IndexCount { samples: usize, indices: usize },
}

/// Samples drawn for one optimisation step, with their dataset positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    samples: Vec<Sample>,
    indices: Vec<usize>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>, indices: Vec<usize>) -> Result<Self, BatchError> {
        let first = samples.first().ok_or(BatchError::Empty)?;
        if samples.len() != indices.len() {
            return Err(BatchError::IndexCount {
                samples: samples.len(),
                indices: indices.len(),
            });
        }
        let (f, m) = (first.feature_dim(), first.num_attrs());
        for (index, s) in samples.iter().enumerate() {
            if s.feature_dim() != f || s.num_attrs() != m {
                return Err(BatchError::Shape {
                    index,
                    features: s.feature_dim(),
                    attrs: s.num_attrs(),
                    expected_features: f,
                    expected_attrs: m,
                });
            }
        }
        Ok(Self { samples, indices })
    }

    /// Batch over a whole dataset, positions `0..n`.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Self, BatchError> {
        let indices = (0..samples.len()).collect();
        Self::new(samples, indices)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples[0].feature_dim()
    }

    pub fn num_attrs(&self) -> usize {
        self.samples[0].num_attrs()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.id).collect()
    }

    /// Labels of attribute `j` across the batch.
    pub fn attr_column(&self, j: usize) -> Vec<u8> {
        self.samples.iter().map(|s| s.attrs[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("margins must satisfy alpha1 > alpha2 > 0 (got alpha1={alpha1}, alpha2={alpha2})")]
    MarginOrder { alpha1: f64, alpha2: f64 },
    #[error("alpha3 must be positive and finite (got {0})")]
    Alpha3(f64),
    #[error("w0 must be non-negative and finite (got {0})")]
    W0(f64),
    #[error("learning rate must be positive and finite (got {0})")]
    LearningRate(f64),
    #[error("weight decay must be non-negative and finite (got {0})")]
    WeightDecay(f64),
    #[error("{0} must be at least 1")]
    NonPositive(&'static str),
}

/// Margins, schedule and architecture for one training setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HfeConfig {
    /// Inter-class margin.
    pub alpha1: f64,
    /// Intra-class margin, strictly below `alpha1`.
    pub alpha2: f64,
    /// Absolute boundary distance between an anchor and its nearest negative.
    pub alpha3: f64,
    /// Terminal weight of the HFE term.
    pub w0: f64,
    /// Planned optimizer steps `T` of the weight ramp.
    pub total_iters: u64,
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub num_attrs: usize,
    /// Identities per batch (P).
    pub num_ids: usize,
    /// Samples per identity per batch (K).
    pub imgs_per_id: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for HfeConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.3,
            alpha2: 0.1,
            alpha3: 5.0,
            w0: 1.0,
            total_iters: 2000,
            feature_dim: 16,
            hidden_dims: vec![32],
            embed_dim: 8,
            num_attrs: 2,
            num_ids: 8,
            imgs_per_id: 4,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl HfeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha2 > 0.0 && self.alpha1 > self.alpha2 && self.alpha1.is_finite()) {
            return Err(ConfigError::MarginOrder {
                alpha1: self.alpha1,
                alpha2: self.alpha2,
            });
        }
        if !(self.alpha3 > 0.0 && self.alpha3.is_finite()) {
            return Err(ConfigError::Alpha3(self.alpha3));
        }
        if !(self.w0 >= 0.0 && self.w0.is_finite()) {
            return Err(ConfigError::W0(self.w0));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ConfigError::LearningRate(self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ConfigError::WeightDecay(self.weight_decay));
        }
        let counts = [
            ("total_iters", self.total_iters as usize),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("num_attrs", self.num_attrs),
            ("num_ids", self.num_ids),
            ("imgs_per_id", self.imgs_per_id),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.hidden_dims.iter().any(|&h| h == 0) {
            return Err(ConfigError::NonPositive("hidden_dims entry"));
        }
        Ok(())
    }

    /// Validates and returns `self`.
    pub fn validated(self) -> Result<Self, ConfigError> {
        self.validate()?;
        Ok(self)
    }

    /// Width of the shared backbone output.
    pub fn backbone_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.feature_dim)
    }

    pub fn batch_size(&self) -> usize {
        self.num_ids * self.imgs_per_id
    }
}

/// Anchor plus its four mined companions for one attribute.
///
/// | member | attribute | identity  | distance |
/// |--------|-----------|-----------|----------|
/// | `p1`   | same      | same      | farthest |
/// | `p2`   | same      | different | nearest  |
/// | `p3`   | same      | different | farthest |
/// | `n`    | different | any       | nearest  |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quintuplet {
    pub attr: usize,
    pub anchor: usize,
    pub p1: Option<usize>,
    pub p2: Option<usize>,
    pub p3: Option<usize>,
    pub n: Option<usize>,
}

impl Quintuplet {
    /// Checks the membership invariants against batch labels for this
    /// quintuplet's attribute.
    pub fn satisfies_invariants(&self, attr_labels: &[u8], ids: &[u64]) -> bool {
        let a = self.anchor;
        if a >= attr_labels.len() || attr_labels.len() != ids.len() {
            return false;
        }
        let in_range = |m: Option<usize>| m.is_none_or(|i| i < ids.len() && i != a);
        if ![self.p1, self.p2, self.p3, self.n].into_iter().all(in_range) {
            return false;
        }
        let same_attr = |i: usize| attr_labels[i] == attr_labels[a];
        let p1_ok = self.p1.is_none_or(|i| same_attr(i) && ids[i] == ids[a]);
        let p2_ok = self.p2.is_none_or(|i| same_attr(i) && ids[i] != ids[a]);
        let p3_ok = self.p3.is_none_or(|i| same_attr(i) && ids[i] != ids[a]);
        let n_ok = self.n.is_none_or(|i| !same_attr(i));
        p1_ok && p2_ok && p3_ok && n_ok
    }
}

/// Number of valid terms behind each loss component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCounts {
    pub ce: usize,
    pub inter: usize,
    pub intra: usize,
    pub abr: usize,
}

/// Per-component loss values for one batch.
///
/// `hfe == inter + intra + abr` and `total == ce + weight_w * hfe`, both
/// computed once from the stored components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub inter: f64,
    pub intra: f64,
    pub abr: f64,
    pub hfe: f64,
    pub weight_w: f64,
    pub total: f64,
    pub counts: ComponentCounts,
}

impl LossReport {
    pub fn compose(
        ce: f64,
        inter: f64,
        intra: f64,
        abr: f64,
        weight_w: f64,
        counts: ComponentCounts,
    ) -> Self {
        let hfe = inter + intra + abr;
        Self {
            ce,
            inter,
            intra,
            abr,
            hfe,
            weight_w,
            total: crate::loss::total_loss(ce, hfe, weight_w),
            counts,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.ce,
            self.inter,
            self.intra,
            self.abr,
            self.hfe,
            self.weight_w,
            self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A single dataset-level inconsistency.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    FeatureLength {
        sample: usize,
        expected: usize,
        found: usize,
    },
    AttrLength {
        sample: usize,
        expected: usize,
        found: usize,
    },
    NonFiniteFeature {
        sample: usize,
        feature: usize,
    },
    NonBinaryAttr {
        sample: usize,
        attr: usize,
        value: u8,
    },
    /// Samples sharing `id` disagree on attribute `attr`.
    IdConsistency {
        id: u64,
        attr: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::FeatureLength {
                sample,
                expected,
                found,
            } => write!(
                f,
                "sample {sample}: {found} features, expected {expected}"
            ),
            Violation::AttrLength {
                sample,
                expected,
                found,
            } => write!(
                f,
                "sample {sample}: {found} attributes, expected {expected}"
            ),
            Violation::NonFiniteFeature { sample, feature } => {
                write!(f, "sample {sample}, column f{feature}: non-finite feature")
            }
            Violation::NonBinaryAttr {
                sample,
                attr,
                value,
            } => write!(
                f,
                "sample {sample}, column a{attr}: attribute value {value} is not binary"
            ),
            Violation::IdConsistency { id, attr } => write!(
                f,
                "id {id}, attribute {attr}: samples of the same identity carry different labels"
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("cannot validate an empty dataset")]
pub struct EmptyDataset;

/// Lists every shape, label-range and identity-consistency violation.
///
/// Shapes are measured against the first sample. Identity consistency
/// produces one violation per offending `(id, attribute)` pair, sorted.
pub fn validate_dataset(samples: &[Sample]) -> Result<Vec<Violation>, EmptyDataset> {
    let first = samples.first().ok_or(EmptyDataset)?;
    let (f, m) = (first.feature_dim(), first.num_attrs());
    let mut out = Vec::new();
    let mut first_of_id: BTreeMap<u64, usize> = BTreeMap::new();
    let mut inconsistent: BTreeSet<(u64, usize)> = BTreeSet::new();

    for (i, s) in samples.iter().enumerate() {
        if s.feature_dim() != f {
            out.push(Violation::FeatureLength {
                sample: i,
                expected: f,
                found: s.feature_dim(),
            });
        }
        if let Some(k) = s.features.iter().position(|v| !v.is_finite()) {
            out.push(Violation::NonFiniteFeature {
                sample: i,
                feature: k,
            });
        }
        if s.num_attrs() != m {
            out.push(Violation::AttrLength {
                sample: i,
                expected: m,
                found: s.num_attrs(),
            });
            continue;
        }
        for (j, &v) in s.attrs.iter().enumerate() {
            if v > 1 {
                out.push(Violation::NonBinaryAttr {
                    sample: i,
                    attr: j,
                    value: v,
                });
            }
        }
        let reference = *first_of_id.entry(s.id).or_insert(i);
        for (j, (&a, &b)) in s.attrs.iter().zip(&samples[reference].attrs).enumerate() {
            if a != b {
                inconsistent.insert((s.id, j));
            }
        }
    }
    out.extend(
        inconsistent
            .into_iter()
            .map(|(id, attr)| Violation::IdConsistency { id, attr }),
    );
    Ok(out)
}
