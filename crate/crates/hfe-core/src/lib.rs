//! # hfe-core
//!
//! Hierarchical feature embedding (HFE) for attribute recognition, with
//! identity labels used as an auxiliary signal inside each attribute's own
//! embedding space.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! * [`types`]: samples, batches, configuration, quintuplets, loss reports
//!   and dataset validation.
//! * [`rng`]: the seeded ChaCha8 stream every random decision is drawn from.
//! * [`mining`]: pairwise distances, batch-hard quintuplet selection and the
//!   P×K identity-balanced sampler.
//! * [`loss`]: cross-entropy, inter-/intra-class triplet terms, absolute
//!   boundary regularization, the cosine weight ramp, with analytic gradients.
//! * [`model`]: the shared-backbone multi-branch network and AdamW.
//! * [`train`]: one optimisation step wired from all of the above.
//! * [`data`]: the synthetic hierarchical dataset and identity-disjoint splits.
//! * [`eval`]: class-/instance-based metrics, embedding diagnostics, PCA.
//! * [`checkpoint`]: the versioned binary training-state container.
//!
//! File IO, CSV and the command line live in the companion `hfe` crate.

#![no_std]

extern crate alloc;

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod loss;
pub mod matrix;
pub mod mining;
pub mod model;
pub mod rng;
pub mod train;
pub mod types;

pub use matrix::Matrix;
pub use rng::{seeded_rng, HfeRng};
pub use types::{
    validate_dataset, Batch, ComponentCounts, ConfigError, HfeConfig, LossReport, Quintuplet,
    Sample, Violation,
};
