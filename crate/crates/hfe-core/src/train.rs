//! One optimisation step: P×K sampling, forward pass, detached batch-hard
//! mining, the enabled loss components, the HFE weight and an AdamW update.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{
    abr_loss, ce_loss, dynamic_weight, inter_loss, intra_loss, pairwise_intra_loss, Component,
    GradientSet, LossError, MinedBatch, ScheduleError,
};
use crate::matrix::Matrix;
use crate::mining::{mine_batch, pk_sample, MiningError, SampleError};
use crate::model::{
    backward_and_step, forward_batch, init_model, label_matrix, AdamParams, Forward, Model,
    ModelError, TrainState,
};
use crate::rng::HfeRng;
use crate::types::{Batch, ComponentCounts, ConfigError, HfeConfig, LossReport, Quintuplet, Sample};

/// ChaCha stream ids derived from the configured seed.
pub const INIT_STREAM: u64 = 0;
pub const SAMPLING_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("use_pairwise_intra and use_intra are mutually exclusive")]
    ExclusiveFlags,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
}

impl TrainError {
    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. }
                | TrainError::Model(ModelError::NonFiniteGradient { .. })
                | TrainError::Model(ModelError::NonFiniteWeights { .. })
                | TrainError::Mining(MiningError::NonFinite { .. })
        )
    }
}

/// Which metric-loss components take part, mirroring the ablation rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub use_inter: bool,
    pub use_intra: bool,
    pub use_abr: bool,
    /// Cosine ramp of the HFE weight; when off the weight is the constant `w0`.
    pub use_dynamic_weight: bool,
    /// Replaces the intra-class triplet with same-identity compactness
    /// (margin `alpha2`). Excludes `use_intra`.
    pub use_pairwise_intra: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationFlags {
    pub const fn full() -> Self {
        Self {
            use_inter: true,
            use_intra: true,
            use_abr: true,
            use_dynamic_weight: true,
            use_pairwise_intra: false,
        }
    }

    pub const fn ce_only() -> Self {
        Self {
            use_inter: false,
            use_intra: false,
            use_abr: false,
            use_dynamic_weight: false,
            use_pairwise_intra: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.use_intra && self.use_pairwise_intra {
            return Err(TrainError::ExclusiveFlags);
        }
        Ok(())
    }

    pub fn any_metric_loss(&self) -> bool {
        self.use_inter || self.use_intra || self.use_abr || self.use_pairwise_intra
    }
}

/// HFE weight at optimizer step `iter`.
pub fn hfe_weight(config: &HfeConfig, flags: &AblationFlags, iter: u64) -> Result<f64, ScheduleError> {
    if flags.use_dynamic_weight {
        dynamic_weight(iter, config.total_iters, config.w0)
    } else {
        Ok(config.w0)
    }
}

/// Everything computed for one batch before the parameter update.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub forward: Forward,
    pub report: LossReport,
    pub grads: GradientSet,
    pub quints: Vec<Quintuplet>,
    /// Per-component embedding gradients (unweighted), absent when disabled.
    pub inter: Option<Component>,
    pub intra: Option<Component>,
    pub abr: Option<Component>,
}

/// Forward pass, mining and all enabled loss terms for `batch` at weight `w`.
pub fn batch_loss(
    model: &Model,
    batch: &Batch,
    config: &HfeConfig,
    flags: &AblationFlags,
    w: f64,
) -> Result<BatchLoss, TrainError> {
    flags.validate()?;
    let forward = forward_batch(model, batch)?;
    let ce = ce_loss(&forward.probs, &label_matrix(batch))?;
    let (dists, quints) = mine_batch(&forward.embeddings, batch)?;
    let mined = MinedBatch::new(&forward.embeddings, &dists, &quints);

    let inter = flags.use_inter.then(|| inter_loss(&mined, config.alpha1));
    let intra = if flags.use_pairwise_intra {
        Some(pairwise_intra_loss(&mined, config.alpha2))
    } else {
        flags.use_intra.then(|| intra_loss(&mined, config.alpha2))
    };
    let abr = flags.use_abr.then(|| abr_loss(&mined, config.alpha3));

    let value = |c: &Option<Component>| c.as_ref().map_or(0.0, |c| c.value);
    let count = |c: &Option<Component>| c.as_ref().map_or(0, |c| c.count);
    let counts = ComponentCounts {
        ce: ce.count,
        inter: count(&inter),
        intra: count(&intra),
        abr: count(&abr),
    };
    let report = LossReport::compose(ce.value, value(&inter), value(&intra), value(&abr), w, counts);

    let mut grads = GradientSet {
        d_embeddings: forward
            .embeddings
            .iter()
            .map(|e| Matrix::zeros(e.rows(), e.cols()))
            .collect(),
        d_logits: ce.d_logits,
    };
    for c in [&inter, &intra, &abr].into_iter().flatten() {
        grads.add_embedding_grads(&c.grads, w);
    }
    Ok(BatchLoss {
        forward,
        report,
        grads,
        quints,
        inter,
        intra,
        abr,
    })
}

/// Fresh training state: weights from stream [`INIT_STREAM`], sampling from
/// stream [`SAMPLING_STREAM`] of `config.seed`.
pub fn initial_state(config: &HfeConfig) -> TrainState {
    let mut init_rng = HfeRng::derive(config.seed, INIT_STREAM);
    let model = init_model(config, &mut init_rng);
    TrainState::new(model, HfeRng::derive(config.seed, SAMPLING_STREAM))
}

pub fn adam_params(config: &HfeConfig) -> AdamParams {
    AdamParams {
        weight_decay: config.weight_decay,
        ..AdamParams::default()
    }
}

/// Samples a P×K batch from `dataset` and performs one update.
pub fn train_step(
    state: &mut TrainState,
    dataset: &[Sample],
    config: &HfeConfig,
    flags: &AblationFlags,
) -> Result<LossReport, TrainError> {
    let iter = state.step;
    let w = hfe_weight(config, flags, iter)?;
    let batch = pk_sample(dataset, config.num_ids, config.imgs_per_id, &mut state.rng)?;
    let out = batch_loss(&state.model, &batch, config, flags, w)?;
    if !out.report.is_finite() {
        return Err(TrainError::NonFiniteLoss { step: iter });
    }
    backward_and_step(
        state,
        &out.forward,
        &out.grads,
        config.learning_rate,
        &adam_params(config),
    )?;
    Ok(out.report)
}

/// Runs `steps` updates from `state`, reporting each step's losses.
pub fn train(
    state: &mut TrainState,
    dataset: &[Sample],
    config: &HfeConfig,
    flags: &AblationFlags,
    steps: u64,
    mut on_step: impl FnMut(u64, &LossReport),
) -> Result<(), TrainError> {
    config.validate()?;
    flags.validate()?;
    for _ in 0..steps {
        let step = state.step;
        let report = train_step(state, dataset, config, flags)?;
        on_step(step, &report);
    }
    Ok(())
}
