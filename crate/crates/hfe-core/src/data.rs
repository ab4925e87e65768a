//! Synthetic hierarchical datasets and identity-disjoint splits.
//!
//! Feature layout for `F` features and `M` attributes, with `wa = F / (2M)`
//! and `wi = (F - M·wa) / M`:
//!
//! * attribute block `j`: coordinates `[j·wa, (j+1)·wa)`; the class signature
//!   is `±attr_sep / (2√wa)` on every coordinate, so class centres sit
//!   `attr_sep` apart;
//! * identity block `j`: coordinates `[M·wa + j·wi, M·wa + (j+1)·wi)`; the
//!   class signature is `±id_class_sep / (2√wi)`, and every identity adds an
//!   offset uniform per coordinate in `±id_sep/√(F - M·wa)` over all
//!   identity coordinates, so its norm stays within `id_sep`;
//! * leftover coordinates (when `F` does not divide evenly) carry only
//!   identity offset and noise.
//!
//! Every sample adds per-coordinate noise uniform in `±noise/√F`. For each
//! identity and attribute, `round(hard_frac · samples_per_id)` samples get
//! their attribute block overwritten with the opposite class signature (plus
//! noise) while the identity block is left intact. Labels always follow the
//! identity, so the result passes [`validate_dataset`](crate::validate_dataset).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::HfeRng;
use crate::types::Sample;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("synthetic generator requires attr_sep > id_sep > noise > 0 (got {attr_sep}, {id_sep}, {noise})")]
    Separations { attr_sep: f64, id_sep: f64, noise: f64 },
    #[error("hard_frac must lie in [0, 0.5) (got {0})")]
    HardFrac(f64),
    #[error("{0} must be at least 1")]
    NonPositive(&'static str),
    #[error("feature_dim {feature_dim} is too small for {num_attrs} attributes (need at least {needed})")]
    FeatureDim {
        feature_dim: usize,
        num_attrs: usize,
        needed: usize,
    },
    #[error("train_frac must lie strictly between 0 and 1 (got {0})")]
    TrainFrac(f64),
    #[error("an identity-disjoint split needs at least 2 ids (got {0})")]
    TooFewIds(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub num_ids: usize,
    pub samples_per_id: usize,
    pub num_attrs: usize,
    pub feature_dim: usize,
    /// Distance between the two class centres of an attribute.
    pub attr_sep: f64,
    /// Maximum distance of an identity centre from its class centre.
    pub id_sep: f64,
    /// Distance between the two class centres inside an identity block.
    pub id_class_sep: f64,
    /// Maximum distance of a sample from its identity centre.
    pub noise: f64,
    /// Fraction of each identity's samples whose attribute block is flipped.
    pub hard_frac: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_ids: 20,
            samples_per_id: 20,
            num_attrs: 2,
            feature_dim: 16,
            attr_sep: 4.0,
            id_sep: 1.5,
            id_class_sep: 2.5,
            noise: 1.0,
            hard_frac: 0.15,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.noise > 0.0 && self.id_sep > self.noise && self.attr_sep > self.id_sep)
            || !self.attr_sep.is_finite()
            || !(self.id_class_sep > 0.0 && self.id_class_sep.is_finite())
        {
            return Err(DataError::Separations {
                attr_sep: self.attr_sep,
                id_sep: self.id_sep,
                noise: self.noise,
            });
        }
        if !(0.0..0.5).contains(&self.hard_frac) {
            return Err(DataError::HardFrac(self.hard_frac));
        }
        for (name, v) in [
            ("num_ids", self.num_ids),
            ("samples_per_id", self.samples_per_id),
            ("num_attrs", self.num_attrs),
        ] {
            if v == 0 {
                return Err(DataError::NonPositive(name));
            }
        }
        let needed = 2 * self.num_attrs;
        if self.feature_dim < needed {
            return Err(DataError::FeatureDim {
                feature_dim: self.feature_dim,
                num_attrs: self.num_attrs,
                needed,
            });
        }
        Ok(())
    }

    /// Coordinates of attribute `j`'s block.
    pub fn attr_block(&self, j: usize) -> core::ops::Range<usize> {
        let wa = self.attr_width();
        j * wa..(j + 1) * wa
    }

    /// Identity-structure coordinates carrying attribute `j`'s class signature.
    pub fn id_block(&self, j: usize) -> core::ops::Range<usize> {
        let start = self.num_attrs * self.attr_width();
        let wi = self.id_width();
        start + j * wi..start + (j + 1) * wi
    }

    fn attr_width(&self) -> usize {
        self.feature_dim / (2 * self.num_attrs)
    }

    fn id_width(&self) -> usize {
        (self.feature_dim - self.num_attrs * self.attr_width()) / self.num_attrs
    }

    /// Class signature value per coordinate of an attribute block.
    pub fn attr_signature(&self, class: u8) -> f64 {
        sign(class) * self.attr_sep / (2.0 * libm::sqrt(self.attr_width() as f64))
    }

    fn id_signature(&self, class: u8) -> f64 {
        sign(class) * self.id_class_sep / (2.0 * libm::sqrt(self.id_width() as f64))
    }
}

fn sign(class: u8) -> f64 {
    if class == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Generated samples plus which (sample, attribute) entries are hard.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub samples: Vec<Sample>,
    /// `hard[i][j]`: sample `i` has attribute `j`'s block overwritten.
    pub hard: Vec<Vec<bool>>,
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData, DataError> {
    spec.validate()?;
    let mut rng = HfeRng::new(spec.seed);
    let (f, m) = (spec.feature_dim, spec.num_attrs);

    // Balanced labels: each attribute column holds floor(n/2) zeros, shuffled.
    let mut labels = vec![vec![0u8; m]; spec.num_ids];
    for j in 0..m {
        let mut column: Vec<u8> = (0..spec.num_ids)
            .map(|i| u8::from(i >= spec.num_ids / 2))
            .collect();
        rng.shuffle(&mut column);
        for (row, v) in labels.iter_mut().zip(column) {
            row[j] = v;
        }
    }

    let id_coords = f - m * spec.attr_width();
    let offset_bound = spec.id_sep / libm::sqrt(id_coords as f64);
    let noise_bound = spec.noise / libm::sqrt(f as f64);
    let n_hard = libm::round(spec.hard_frac * spec.samples_per_id as f64) as usize;

    let mut samples = Vec::with_capacity(spec.num_ids * spec.samples_per_id);
    let mut hard = Vec::with_capacity(samples.capacity());
    for (id, attrs) in labels.iter().enumerate() {
        let mut center = vec![0.0; f];
        for (j, &c) in attrs.iter().enumerate() {
            for k in spec.attr_block(j) {
                center[k] = spec.attr_signature(c);
            }
            for k in spec.id_block(j) {
                center[k] = spec.id_signature(c);
            }
        }
        for v in center.iter_mut().skip(m * spec.attr_width()) {
            *v += rng.uniform(-offset_bound, offset_bound);
        }

        let mut flipped = vec![vec![false; m]; spec.samples_per_id];
        for j in 0..m {
            let mut order: Vec<usize> = (0..spec.samples_per_id).collect();
            rng.shuffle(&mut order);
            for &s in &order[..n_hard] {
                flipped[s][j] = true;
            }
        }

        for flags in flipped {
            let mut x = center.clone();
            for (j, &is_hard) in flags.iter().enumerate() {
                if is_hard {
                    let opposite = spec.attr_signature(1 - attrs[j]);
                    for k in spec.attr_block(j) {
                        x[k] = opposite;
                    }
                }
            }
            for v in x.iter_mut() {
                *v += rng.uniform(-noise_bound, noise_bound);
            }
            samples.push(Sample::new(x, attrs.clone(), id as u64));
            hard.push(flags);
        }
    }
    Ok(SynthData { samples, hard })
}

/// Sample positions of an identity-disjoint split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl IdSplit {
    pub fn select<T: Clone>(&self, items: &[T]) -> (Vec<T>, Vec<T>) {
        let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
        (pick(&self.train), pick(&self.test))
    }
}

/// Splits by identity: `round(train_frac · ids)` identities (clamped to
/// `[1, ids - 1]`) go to train after a shuffle of the sorted id list.
/// Sample order inside each partition follows the input order.
pub fn split_indices_by_id(samples: &[Sample], train_frac: f64, rng: &mut HfeRng) -> Result<IdSplit, DataError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DataError::TrainFrac(train_frac));
    }
    let ids: BTreeSet<u64> = samples.iter().map(|s| s.id).collect();
    if ids.len() < 2 {
        return Err(DataError::TooFewIds(ids.len()));
    }
    let mut ids: Vec<u64> = ids.into_iter().collect();
    rng.shuffle(&mut ids);
    let n_train = (libm::round(train_frac * ids.len() as f64) as usize).clamp(1, ids.len() - 1);
    let in_train: BTreeMap<u64, bool> = ids
        .iter()
        .enumerate()
        .map(|(rank, &id)| (id, rank < n_train))
        .collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if in_train[&s.id] {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    Ok(IdSplit { train, test })
}

pub fn split_by_id(
    samples: &[Sample],
    train_frac: f64,
    rng: &mut HfeRng,
) -> Result<(Vec<Sample>, Vec<Sample>), DataError> {
    Ok(split_indices_by_id(samples, train_frac, rng)?.select(samples))
}
