//! Shared-backbone network with one embedding/classifier branch per attribute.
//!
//! ```text
//! x ──► [Dense → ReLU] × L ──► h ──┬─► Dense(H→D) = e_1 ─► Dense(D→1) ─► σ ─► p_1
//!                                  ├─► ...
//!                                  └─► Dense(H→D) = e_M ─► Dense(D→1) ─► σ ─► p_M
//! ```
//!
//! Branch embeddings `e_j` feed both the metric losses and the classifier, so
//! cross-entropy gradients also shape each attribute's embedding space.
//! Parameters are updated with Adam and decoupled weight decay.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::loss::{sigmoid, GradientSet};
use crate::matrix::Matrix;
use crate::rng::HfeRng;
use crate::types::{Batch, HfeConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("input has {found} features, model expects {expected}")]
    FeatureDim { expected: usize, found: usize },
    #[error("gradient shapes do not match the forward pass")]
    GradientShape,
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: u64 },
    #[error("non-finite weights after step {step}")]
    NonFiniteWeights { step: u64 },
    #[error("flat parameter vector has {found} entries, model has {expected}")]
    ParamCount { expected: usize, found: usize },
}

/// Fully connected layer, `weight` is `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        x.affine(&self.weight, &self.bias)
    }

    fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    /// `H → D`
    pub embed: Dense,
    /// `D → 1`
    pub classifier: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub backbone: Vec<Dense>,
    pub branches: Vec<Branch>,
}

/// Architecture sizes recorded alongside the weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embed_dim: usize,
    pub num_attrs: usize,
}

impl Architecture {
    pub fn from_config(config: &HfeConfig) -> Self {
        Self {
            feature_dim: config.feature_dim,
            hidden_dims: config.hidden_dims.clone(),
            embed_dim: config.embed_dim,
            num_attrs: config.num_attrs,
        }
    }

    pub fn backbone_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.feature_dim)
    }
}

impl Model {
    /// All-zero model of the given shape.
    pub fn zeros(arch: &Architecture) -> Self {
        let mut backbone = Vec::with_capacity(arch.hidden_dims.len());
        let mut width = arch.feature_dim;
        for &h in &arch.hidden_dims {
            backbone.push(Dense::zeros(width, h));
            width = h;
        }
        let branches = (0..arch.num_attrs)
            .map(|_| Branch {
                embed: Dense::zeros(width, arch.embed_dim),
                classifier: Dense::zeros(arch.embed_dim, 1),
            })
            .collect();
        Self { backbone, branches }
    }

    pub fn architecture(&self) -> Architecture {
        let feature_dim = self
            .backbone
            .first()
            .map(Dense::inputs)
            .unwrap_or_else(|| self.branches[0].embed.inputs());
        Architecture {
            feature_dim,
            hidden_dims: self.backbone.iter().map(Dense::outputs).collect(),
            embed_dim: self.branches[0].embed.outputs(),
            num_attrs: self.branches.len(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.architecture().feature_dim
    }

    pub fn num_attrs(&self) -> usize {
        self.branches.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.branches[0].embed.outputs()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.backbone
            .iter()
            .chain(self.branches.iter().flat_map(|b| [&b.embed, &b.classifier]))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.backbone.iter_mut().chain(
            self.branches
                .iter_mut()
                .flat_map(|b| [&mut b.embed, &mut b.classifier]),
        )
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(Dense::num_params).sum()
    }

    /// Parameters in canonical order: backbone layers first, then for each
    /// branch the embedding layer and the classifier; each layer contributes
    /// its row-major weight followed by its bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in self.layers() {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(ModelError::ParamCount {
                expected,
                found: flat.len(),
            });
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }
}

/// Weights uniform in `[-1/√fan_in, 1/√fan_in)`, biases zero. Layers are
/// filled in canonical parameter order.
pub fn init_model(config: &HfeConfig, rng: &mut HfeRng) -> Model {
    let mut model = Model::zeros(&Architecture::from_config(config));
    for layer in model.layers_mut() {
        let bound = init_bound(layer.inputs());
        for w in layer.weight.as_mut_slice() {
            *w = rng.uniform(-bound, bound);
        }
    }
    model
}

/// Fan-in scale used by [`init_model`].
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / libm::sqrt(fan_in as f64)
}

/// Outputs of a forward pass plus the activations backpropagation needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    /// One `B × D` matrix per attribute.
    pub embeddings: Vec<Matrix>,
    /// `B × M` pre-sigmoid outputs.
    pub logits: Matrix,
    /// `B × M` sigmoid outputs.
    pub probs: Matrix,
    /// Input followed by each backbone layer's post-ReLU output.
    activations: Vec<Matrix>,
}

impl Forward {
    pub fn backbone_output(&self) -> &Matrix {
        self.activations.last().expect("input is always cached")
    }
}

pub fn forward(model: &Model, features: &Matrix) -> Result<Forward, ModelError> {
    let expected = model.feature_dim();
    if features.cols() != expected {
        return Err(ModelError::FeatureDim {
            expected,
            found: features.cols(),
        });
    }
    let mut activations = Vec::with_capacity(model.backbone.len() + 1);
    activations.push(features.clone());
    for layer in &model.backbone {
        let mut h = layer.forward(activations.last().unwrap());
        for v in h.as_mut_slice() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        activations.push(h);
    }
    let h = activations.last().unwrap();
    let b = features.rows();
    let m = model.num_attrs();
    let mut logits = Matrix::zeros(b, m);
    let mut embeddings = Vec::with_capacity(m);
    for (j, branch) in model.branches.iter().enumerate() {
        let e = branch.embed.forward(h);
        let z = branch.classifier.forward(&e);
        for i in 0..b {
            logits[(i, j)] = z[(i, 0)];
        }
        embeddings.push(e);
    }
    let probs = Matrix::from_vec(
        b,
        m,
        logits.as_slice().iter().map(|&z| sigmoid(z)).collect(),
    );
    Ok(Forward {
        embeddings,
        logits,
        probs,
        activations,
    })
}

/// Stacks batch features into a `B × F` matrix.
pub fn feature_matrix(batch: &Batch) -> Matrix {
    let rows: Vec<&[f64]> = batch.samples().iter().map(|s| s.features.as_slice()).collect();
    Matrix::from_rows(&rows)
}

/// Stacks batch labels into a `B × M` matrix of 0.0/1.0.
pub fn label_matrix(batch: &Batch) -> Matrix {
    let b = batch.len();
    let m = batch.num_attrs();
    let data = batch
        .samples()
        .iter()
        .flat_map(|s| s.attrs.iter().map(|&a| f64::from(a)))
        .collect();
    Matrix::from_vec(b, m, data)
}

pub fn forward_batch(model: &Model, batch: &Batch) -> Result<Forward, ModelError> {
    forward(model, &feature_matrix(batch))
}

/// Parameter gradients for `grads` flowing into the outputs of `fwd`.
///
/// The returned model holds gradients in place of weights.
pub fn backward(model: &Model, fwd: &Forward, grads: &GradientSet) -> Result<Model, ModelError> {
    let b = fwd.logits.rows();
    let m = model.num_attrs();
    if grads.d_logits.shape() != (b, m)
        || grads.d_embeddings.len() != m
        || grads
            .d_embeddings
            .iter()
            .zip(&fwd.embeddings)
            .any(|(g, e)| g.shape() != e.shape())
    {
        return Err(ModelError::GradientShape);
    }
    let mut out = Model::zeros(&model.architecture());
    let h = fwd.backbone_output();
    let mut dh = Matrix::zeros(h.rows(), h.cols());

    for (j, branch) in model.branches.iter().enumerate() {
        let e = &fwd.embeddings[j];
        let dz = Matrix::from_vec(b, 1, (0..b).map(|i| grads.d_logits[(i, j)]).collect());
        let g = &mut out.branches[j];
        g.classifier.weight = dz.transpose_matmul(e);
        g.classifier.bias = dz.column_sums();

        let mut de = grads.d_embeddings[j].clone();
        de.add_assign(&dz.matmul(&branch.classifier.weight));
        g.embed.weight = de.transpose_matmul(h);
        g.embed.bias = de.column_sums();
        dh.add_assign(&de.matmul(&branch.embed.weight));
    }

    let mut upstream = dh;
    for l in (0..model.backbone.len()).rev() {
        let post = &fwd.activations[l + 1];
        for (g, &a) in upstream.as_mut_slice().iter_mut().zip(post.as_slice()) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        let input = &fwd.activations[l];
        out.backbone[l].weight = upstream.transpose_matmul(input);
        out.backbone[l].bias = upstream.column_sums();
        if l > 0 {
            upstream = upstream.matmul(&model.backbone[l].weight);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay coefficient.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First/second moment accumulators in canonical parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One AdamW update of `params` in place; `t` is the 1-based step number.
///
/// `p ← p − lr · (m̂ / (√v̂ + ε) + λ·p)`
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    t: u64,
    lr: f64,
    hp: &AdamParams,
) {
    let bc1 = 1.0 - libm::pow(hp.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(hp.beta2, t as f64);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * (m_hat / (libm::sqrt(v_hat) + hp.eps) + hp.weight_decay * *p);
    }
}

/// Model, optimizer moments, step counter and the sampling stream.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub moments: AdamMoments,
    /// Completed optimizer steps.
    pub step: u64,
    pub rng: HfeRng,
}

impl TrainState {
    pub fn new(model: Model, rng: HfeRng) -> Self {
        let moments = AdamMoments::zeros(model.num_params());
        Self {
            model,
            moments,
            step: 0,
            rng,
        }
    }
}

/// Backpropagates `grads` through `fwd` and applies one AdamW step.
///
/// Non-finite gradients leave the state untouched.
pub fn backward_and_step(
    state: &mut TrainState,
    fwd: &Forward,
    grads: &GradientSet,
    lr: f64,
    hp: &AdamParams,
) -> Result<(), ModelError> {
    if !grads.is_finite() {
        return Err(ModelError::NonFiniteGradient { step: state.step });
    }
    let param_grads = backward(&state.model, fwd, grads)?.to_flat();
    if param_grads.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteGradient { step: state.step });
    }
    let mut params = state.model.to_flat();
    let t = state.step + 1;
    adam_update(&mut params, &param_grads, &mut state.moments, t, lr, hp);
    if params.iter().any(|p| !p.is_finite()) {
        return Err(ModelError::NonFiniteWeights { step: t });
    }
    state.model.set_flat(&params)?;
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn tiny_config() -> HfeConfig {
        HfeConfig {
            feature_dim: 4,
            hidden_dims: vec![8],
            embed_dim: 4,
            num_attrs: 2,
            ..HfeConfig::default()
        }
    }

    #[test]
    fn zero_model_outputs() {
        let model = Model::zeros(&Architecture::from_config(&tiny_config()));
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 5.0, 2.0]]);
        let f = forward(&model, &x).unwrap();
        assert!(f.probs.as_slice().iter().all(|&p| p == 0.5));
        assert!(f.embeddings.iter().all(|e| e.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn hand_set_weights() {
        // Identity backbone on 2 features, one branch with D = 2.
        let mut model = Model::zeros(&Architecture {
            feature_dim: 2,
            hidden_dims: vec![2],
            embed_dim: 2,
            num_attrs: 1,
        });
        model.backbone[0].weight = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]);
        model.branches[0].embed.weight = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0]]);
        model.branches[0].embed.bias = vec![0.5, 0.0];
        model.branches[0].classifier.weight = Matrix::from_rows(&[[2.0, -1.0]]);
        model.branches[0].classifier.bias = vec![-1.0];
        let x = Matrix::from_rows(&[[1.0, 2.0], [-1.0, 3.0]]);
        let f = forward(&model, &x).unwrap();
        // sample 0: h = (1,2), e = (3.5, -1), z = 7 + 1 - 1 = 7
        assert_eq!(f.embeddings[0].row(0), &[3.5, -1.0]);
        assert_eq!(f.logits[(0, 0)], 7.0);
        assert!((f.probs[(0, 0)] - 1.0 / (1.0 + libm::exp(-7.0))).abs() < 1e-15);
        // sample 1: h = relu(-1, 3) = (0, 3), e = (3.5, -3), z = 7 + 3 - 1 = 9
        assert_eq!(f.embeddings[0].row(1), &[3.5, -3.0]);
        assert_eq!(f.logits[(1, 0)], 9.0);
    }

    #[test]
    fn output_shapes() {
        let cfg = tiny_config();
        let model = init_model(&cfg, &mut seeded_rng(1));
        let x = Matrix::zeros(8, 4);
        let f = forward(&model, &x).unwrap();
        assert_eq!(f.embeddings.len(), 2);
        assert!(f.embeddings.iter().all(|e| e.shape() == (8, 4)));
        assert_eq!(f.probs.shape(), (8, 2));
        assert!(matches!(
            forward(&model, &Matrix::zeros(8, 3)),
            Err(ModelError::FeatureDim { .. })
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = tiny_config();
        let a = init_model(&cfg, &mut seeded_rng(5));
        let b = init_model(&cfg, &mut seeded_rng(5));
        let c = init_model(&cfg, &mut seeded_rng(6));
        assert_eq!(a.to_flat(), b.to_flat());
        assert_ne!(a.to_flat(), c.to_flat());
        for l in a.layers() {
            let bound = init_bound(l.inputs());
            assert!(l.weight.as_slice().iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn flat_round_trip() {
        let cfg = tiny_config();
        let a = init_model(&cfg, &mut seeded_rng(5));
        let mut b = Model::zeros(&a.architecture());
        b.set_flat(&a.to_flat()).unwrap();
        assert_eq!(a, b);
        assert!(b.set_flat(&[0.0]).is_err());
    }

    #[test]
    fn zero_gradient_applies_only_decay() {
        let cfg = tiny_config();
        let model = init_model(&cfg, &mut seeded_rng(2));
        let before = model.to_flat();
        let mut state = TrainState::new(model, seeded_rng(0));
        let x = Matrix::zeros(3, 4);
        let fwd = forward(&state.model, &x).unwrap();
        let grads = GradientSet::zeros(3, 4, 2);
        let hp = AdamParams::default();
        backward_and_step(&mut state, &fwd, &grads, 0.01, &hp).unwrap();
        for (a, b) in state.model.to_flat().iter().zip(&before) {
            assert_eq!(*a, b - 0.01 * (0.0 + hp.weight_decay * b));
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn single_weight_adam_matches_closed_form() {
        // Step 1: m = (1-b1) g, v = (1-b2) g², m̂ = g, v̂ = g², update = g/(|g|+ε)
        let hp = AdamParams::default();
        let mut p = [0.5];
        let mut mom = AdamMoments::zeros(1);
        adam_update(&mut p, &[2.0], &mut mom, 1, 0.1, &hp);
        let expected = 0.5 - 0.1 * (2.0 / (2.0 + 1e-8) + 5e-4 * 0.5);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {}", p[0], expected);
        // Step 2 with g = -1
        let p1 = p[0];
        adam_update(&mut p, &[-1.0], &mut mom, 2, 0.1, &hp);
        let m = 0.9 * 0.2 + 0.1 * -1.0;
        let v = 0.999 * (0.001 * 4.0) + 0.001 * 1.0;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let expected = p1 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8) + 5e-4 * p1);
        assert!((p[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let cfg = tiny_config();
        let model = init_model(&cfg, &mut seeded_rng(2));
        let mut state = TrainState::new(model, seeded_rng(0));
        let before = state.clone();
        let fwd = forward(&state.model, &Matrix::zeros(2, 4)).unwrap();
        let mut grads = GradientSet::zeros(2, 4, 2);
        grads.d_logits[(1, 1)] = f64::NAN;
        assert_eq!(
            backward_and_step(&mut state, &fwd, &grads, 0.01, &AdamParams::default()),
            Err(ModelError::NonFiniteGradient { step: 0 })
        );
        assert_eq!(state, before);
    }
}
