//! CE-only versus full-HFE comparison on identity-disjoint synthetic splits.

use hfe_core::data::{generate_synthetic, split_indices_by_id, SynthSpec};
use hfe_core::eval::{class_based_metrics, embedding_diagnostics, predictions};
use hfe_core::mining::SampleError;
use hfe_core::model::forward_batch;
use hfe_core::train::{initial_state, train, AblationFlags, TrainError};
use hfe_core::{Batch, HfeConfig, HfeRng, Sample};
use serde::{Deserialize, Serialize};

/// Stream of the per-seed RNG that draws the train/test identity split.
pub const SPLIT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSetup {
    pub spec: SynthSpec,
    pub config: HfeConfig,
    pub train_frac: f64,
    pub steps: u64,
}

impl Default for AblationSetup {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            config: HfeConfig::default(),
            train_frac: 0.5,
            steps: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    /// Class-based average accuracy on test identities.
    pub test_accuracy: f64,
    /// Fraction of test (sample, attribute) hard entries predicted correctly.
    pub hard_accuracy: f64,
    /// Order rate on training embeddings, averaged over attributes.
    pub order_rate: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub ce: ArmResult,
    pub hfe: ArmResult,
}

fn labels(samples: &[Sample]) -> Vec<Vec<u8>> {
    samples.iter().map(|s| s.attrs.clone()).collect()
}

fn run_arm(
    setup: &AblationSetup,
    config: &HfeConfig,
    flags: &AblationFlags,
    train_set: &[Sample],
    test_set: &[Sample],
    test_hard: &[Vec<bool>],
) -> Result<ArmResult, TrainError> {
    let mut state = initial_state(config);
    train(&mut state, train_set, config, flags, setup.steps, |_, _| {})?;

    let test_batch = Batch::from_samples(test_set.to_vec()).map_err(SampleError::from)?;
    let test_fwd = forward_batch(&state.model, &test_batch)?;
    let test_preds = predictions(&test_fwd.probs);
    let test_labels = labels(test_set);
    let test_accuracy = class_based_metrics(&test_preds, &test_labels)
        .expect("aligned predictions")
        .avg;
    let (mut hit, mut total) = (0usize, 0usize);
    for ((p, y), h) in test_preds.iter().zip(&test_labels).zip(test_hard) {
        for j in 0..y.len() {
            if h[j] {
                total += 1;
                hit += usize::from(p[j] == y[j]);
            }
        }
    }

    let train_batch = Batch::from_samples(train_set.to_vec()).map_err(SampleError::from)?;
    let train_fwd = forward_batch(&state.model, &train_batch)?;
    let train_labels = labels(train_set);
    let ids: Vec<u64> = train_set.iter().map(|s| s.id).collect();
    let diags = embedding_diagnostics(&train_fwd.embeddings, &train_labels, &ids).expect("aligned embeddings");
    let order_rate = diags.iter().map(|d| d.quintuplet_order_rate).sum::<f64>() / diags.len() as f64;
    let train_accuracy = class_based_metrics(&predictions(&train_fwd.probs), &train_labels)
        .expect("aligned predictions")
        .avg;

    Ok(ArmResult {
        test_accuracy,
        hard_accuracy: if total == 0 { 0.0 } else { hit as f64 / total as f64 },
        order_rate,
        train_accuracy,
    })
}

/// Generates the seed's dataset and split, then trains and scores both arms
/// from the same initialization and sampling stream.
pub fn run_seed(setup: &AblationSetup, seed: u64) -> Result<SeedResult, TrainError> {
    let spec = SynthSpec {
        seed,
        ..setup.spec.clone()
    };
    let data = generate_synthetic(&spec).expect("valid synthetic spec");
    let split = split_indices_by_id(&data.samples, setup.train_frac, &mut HfeRng::derive(seed, SPLIT_STREAM))
        .expect("at least two identities");
    let (train_set, test_set) = split.select(&data.samples);
    let (_, test_hard) = split.select(&data.hard);
    let config = HfeConfig {
        seed,
        total_iters: setup.steps.max(1),
        feature_dim: spec.feature_dim,
        num_attrs: spec.num_attrs,
        ..setup.config.clone()
    };
    let arm = |flags| run_arm(setup, &config, &flags, &train_set, &test_set, &test_hard);
    Ok(SeedResult {
        seed,
        ce: arm(AblationFlags::ce_only())?,
        hfe: arm(AblationFlags::full())?,
    })
}
