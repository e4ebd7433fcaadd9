//! A small fully-connected classifier and its Adam training loop.
//!
//! Hidden layers use a rectifier; the last layer emits raw logits that feed
//! either loss in [`crate::losses`]. Training is single-threaded and fully
//! determined by the seed in [`TrainConfig`].

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::Dataset;
use crate::losses::{self, Aggregation, BatchTarget, LossError, LossKind, SigmoidWeighting};
use crate::matrix::Matrix;
use crate::rng;
use crate::weighting::{ClassWeights, WeightingScheme};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("need at least an input and an output size, got {0:?}")]
    TooFewLayers(Vec<usize>),
    #[error("layer sizes must be positive, got {0:?}")]
    ZeroLayerSize(Vec<usize>),
    #[error("features have {got} columns, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("parameter and gradient shapes differ")]
    ShapeMismatch,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{classes} class weights for a dataset with {labels} labels")]
    WeightCount { classes: usize, labels: usize },
    #[error("softmax training needs exactly one label per row; row {0} has {1}")]
    NotSingleLabel(usize, usize),
    #[error("sigmoid prediction needs one threshold per label")]
    MissingThresholds,
    #[error("{expected} labels but {got} thresholds")]
    ThresholdCount { expected: usize, got: usize },
    #[error("loss became non-finite at epoch {0}")]
    Diverged(usize),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// One affine layer: `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

/// Parameters of a rectifier MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layers: Vec<Layer>,
}

impl ModelParams {
    /// Builds a model from explicit layers; adjacent dimensions must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::TooFewLayers(vec![]));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(ModelError::ShapeMismatch);
            }
        }
        if layers.iter().any(|l| l.bias.len() != l.outputs()) {
            return Err(ModelError::ShapeMismatch);
        }
        Ok(Self { layers })
    }

    /// Same architecture, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// `[in, hidden..., out]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Parameter tensors in a fixed order: weights then bias, layer by layer.
    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// SHA-256 over the little-endian bytes of every parameter.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for size in self.layer_sizes() {
            h.update((size as u64).to_le_bytes());
        }
        for t in self.tensors() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn check_input(&self, features: &Matrix) -> Result<(), ModelError> {
        if features.cols() != self.input_dim() {
            return Err(ModelError::InputDim {
                expected: self.input_dim(),
                got: features.cols(),
            });
        }
        Ok(())
    }

    /// Logits for every row of `features`.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix, ModelError> {
        self.check_input(features)?;
        let mut a = features.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            a = affine(layer, &a);
            if i < last {
                relu_in_place(&mut a);
            }
        }
        Ok(a)
    }

    /// Loss and parameter gradients for one batch.
    pub fn loss_and_gradients(
        &self,
        features: &Matrix,
        targets: &BatchTarget,
        weights: &[f64],
        aggregation: Aggregation,
        mode: SigmoidWeighting,
    ) -> Result<(f64, ModelParams), ModelError> {
        self.check_input(features)?;
        // inputs[l] is the input to layer l; pre[l] its pre-activation.
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = features.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = affine(layer, &a);
            inputs.push(a);
            a = z.clone();
            if i < last {
                relu_in_place(&mut a);
            }
            pre.push(z);
        }
        let out = losses::weighted_loss(&a, targets, weights, aggregation, mode)?;

        let mut grads = self.zeros_like();
        let mut dz = out.grad_logits;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &inputs[l];
            let g = &mut grads.layers[l];
            for r in 0..dz.rows() {
                let dz_row = dz.row(r);
                let in_row = input.row(r);
                for (o, &d) in dz_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    for (gw, &x) in g.weights.row_mut(o).iter_mut().zip(in_row) {
                        *gw += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let mut da = Matrix::zeros(dz.rows(), layer.inputs());
            for r in 0..dz.rows() {
                let da_row = da.row_mut(r);
                for (o, &d) in dz.row(r).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (x, &w) in da_row.iter_mut().zip(layer.weights.row(o)) {
                        *x += d * w;
                    }
                }
            }
            let z_prev = &pre[l - 1];
            for (x, &z) in da.as_mut_slice().iter_mut().zip(z_prev.as_slice()) {
                if z <= 0.0 {
                    *x = 0.0;
                }
            }
            dz = da;
        }
        Ok((out.loss, grads))
    }
}

fn affine(layer: &Layer, input: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(input.rows(), layer.outputs());
    for r in 0..input.rows() {
        let x = input.row(r);
        let y = out.row_mut(r);
        for (o, yo) in y.iter_mut().enumerate() {
            let w = layer.weights.row(o);
            let mut acc = layer.bias[o];
            for (a, b) in w.iter().zip(x) {
                acc += a * b;
            }
            *yo = acc;
        }
    }
    out
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Random parameters for `layer_sizes = [in, hidden..., out]`.
///
/// Weights are standard normal scaled by `1 / sqrt(fan_in)`; biases are zero.
pub fn init_params(layer_sizes: &[usize], seed: u64) -> Result<ModelParams, ModelError> {
    if layer_sizes.len() < 2 {
        return Err(ModelError::TooFewLayers(layer_sizes.to_vec()));
    }
    if layer_sizes.contains(&0) {
        return Err(ModelError::ZeroLayerSize(layer_sizes.to_vec()));
    }
    let mut rng = rng::seeded(seed);
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect();
            Layer {
                weights: Matrix::from_vec(fan_out, fan_in, data).expect("sized"),
                bias: vec![0.0; fan_out],
            }
        })
        .collect();
    Ok(ModelParams { layers })
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::new(params.num_params())
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update of a flat parameter vector.
    pub fn update(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        cfg: &AdamConfig,
    ) -> Result<(), ModelError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(ModelError::ShapeMismatch);
        }
        self.t += 1;
        let (c1, c2) = self.bias_corrections(cfg);
        apply(params, grads, &mut self.m, &mut self.v, c1, c2, cfg);
        Ok(())
    }

    fn bias_corrections(&self, cfg: &AdamConfig) -> (f64, f64) {
        let t = self.t as i32;
        (1.0 - cfg.beta1.powi(t), 1.0 - cfg.beta2.powi(t))
    }
}

fn apply(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c1: f64,
    c2: f64,
    cfg: &AdamConfig,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Applies one Adam step to every tensor of `params`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), ModelError> {
    if params.layer_sizes() != grads.layer_sizes() || params.num_params() != state.m.len() {
        return Err(ModelError::ShapeMismatch);
    }
    state.t += 1;
    let (c1, c2) = state.bias_corrections(cfg);
    let mut offset = 0;
    for (p, g) in params.tensors_mut().zip(grads.tensors()) {
        let len = p.len();
        apply(
            p,
            g,
            &mut state.m[offset..offset + len],
            &mut state.v[offset..offset + len],
            c1,
            c2,
            cfg,
        );
        offset += len;
    }
    Ok(())
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub scheme: WeightingScheme,
    pub aggregation: Aggregation,
    #[serde(default)]
    pub sigmoid_weighting: SigmoidWeighting,
    /// Widths of the hidden layers.
    pub hidden_layers: Vec<usize>,
}

impl TrainConfig {
    /// Defaults for a loss head: learning rate 1e-5 for softmax, 1e-4 for
    /// sigmoid; 100 epochs of batch 32 through one hidden layer of 64.
    pub fn for_loss(loss_kind: LossKind, scheme: WeightingScheme) -> Self {
        Self {
            learning_rate: match loss_kind {
                LossKind::Softmax => 1e-5,
                LossKind::Sigmoid => 1e-4,
            },
            epochs: 100,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            loss_kind,
            scheme,
            aggregation: Aggregation::default_for(&scheme),
            sigmoid_weighting: SigmoidWeighting::default(),
            hidden_layers: vec![64],
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return bad("adam_epsilon must be positive");
        }
        if self.hidden_layers.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        self.scheme
            .validate()
            .map_err(|e| ModelError::InvalidConfig(e.to_string()))
    }
}

/// Per-epoch mean training loss and the final parameter digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_losses: Vec<f64>,
    pub digest: String,
}

/// Converts a dataset's label rows into batch targets for `kind`.
pub fn targets_for(ds: &Dataset, kind: LossKind, rows: &[usize]) -> Result<BatchTarget, ModelError> {
    match kind {
        LossKind::Sigmoid => Ok(BatchTarget::MultiHot(ds.labels().select_rows(rows))),
        LossKind::Softmax => rows
            .iter()
            .map(|&r| single_class(ds.labels().row(r)).ok_or_else(|| {
                let ones = ds.labels().row(r).iter().filter(|&&v| v == 1.0).count();
                ModelError::NotSingleLabel(r, ones)
            }))
            .collect::<Result<_, _>>()
            .map(BatchTarget::SingleClass),
    }
}

fn single_class(row: &[f64]) -> Option<usize> {
    let mut found = None;
    for (i, &v) in row.iter().enumerate() {
        if v == 1.0 {
            if found.is_some() {
                return None;
            }
            found = Some(i);
        }
    }
    found
}

/// Trains a fresh model on `train_set` with Adam.
///
/// Runs `epochs * ceil(n / batch_size)` steps. Each epoch visits every row
/// once in an order shuffled from the config seed.
pub fn train(
    train_set: &Dataset,
    config: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(ModelParams, TrainHistory), ModelError> {
    config.validate()?;
    let n = train_set.len();
    if n == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let k = train_set.num_labels();
    if weights.len() != k {
        return Err(ModelError::WeightCount {
            classes: weights.len(),
            labels: k,
        });
    }
    // Fail on incompatible labels before spending any steps.
    let all: Vec<usize> = (0..n).collect();
    targets_for(train_set, config.loss_kind, &all)?;

    let mut sizes = vec![train_set.feature_dim()];
    sizes.extend(&config.hidden_layers);
    sizes.push(k);
    let mut params = init_params(&sizes, config.seed)?;
    let mut state = AdamState::for_params(&params);
    let adam = config.adam();
    let mut shuffle_rng = rng::seeded(rng::derive_seed(config.seed, "shuffle"));
    let mut order = all;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = train_set.features().select_rows(batch);
            let t = targets_for(train_set, config.loss_kind, batch)?;
            let (loss, grads) =
                params.loss_and_gradients(&x, &t, weights.weights(), config.aggregation, config.sigmoid_weighting)?;
            total += loss * batch.len() as f64;
            adam_step(&mut params, &grads, &mut state, &adam)?;
        }
        let mean = total / n as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(ModelError::Diverged(epoch));
        }
        epoch_losses.push(mean);
    }
    let digest = params.digest();
    Ok((params, TrainHistory { epoch_losses, digest }))
}

/// Predicted labels per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predictions {
    /// Top-1 class per sample.
    Classes(Vec<usize>),
    /// Every label whose probability meets its threshold, per sample.
    Labels(Vec<Vec<usize>>),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Turns logits into labels: top-1 for softmax, per-label thresholds on the
/// sigmoid probability otherwise.
pub fn predict_from_logits(
    logits: &Matrix,
    loss_kind: LossKind,
    thresholds: Option<&[f64]>,
) -> Result<Predictions, ModelError> {
    match loss_kind {
        LossKind::Softmax => Ok(Predictions::Classes(logits.iter_rows().map(argmax).collect())),
        LossKind::Sigmoid => {
            let th = thresholds.ok_or(ModelError::MissingThresholds)?;
            if th.len() != logits.cols() {
                return Err(ModelError::ThresholdCount {
                    expected: logits.cols(),
                    got: th.len(),
                });
            }
            Ok(Predictions::Labels(
                logits
                    .iter_rows()
                    .map(|z| {
                        z.iter()
                            .zip(th)
                            .enumerate()
                            .filter(|(_, (&zi, &ti))| losses::sigmoid(zi) >= ti)
                            .map(|(i, _)| i)
                            .collect()
                    })
                    .collect(),
            ))
        }
    }
}

pub fn predict(
    params: &ModelParams,
    features: &Matrix,
    loss_kind: LossKind,
    thresholds: Option<&[f64]>,
) -> Result<Predictions, ModelError> {
    let logits = params.forward(features)?;
    predict_from_logits(&logits, loss_kind, thresholds)
}

/// On-disk model: shapes, full-precision parameters, the config and digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub label_names: Vec<String>,
    pub params: ModelParams,
    pub config: TrainConfig,
    pub digest: String,
}

impl Checkpoint {
    pub fn new(params: ModelParams, config: TrainConfig, label_names: Vec<String>) -> Self {
        Self {
            layer_sizes: params.layer_sizes(),
            digest: params.digest(),
            label_names,
            params,
            config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    /// Parses a checkpoint and verifies its shapes and digest.
    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint =
            serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let params = ModelParams::from_layers(ck.params.layers.clone())?;
        for l in params.layers() {
            if l.weights.as_slice().len() != l.inputs() * l.outputs() {
                return Err(ModelError::ShapeMismatch);
            }
        }
        if params.layer_sizes() != ck.layer_sizes {
            return Err(ModelError::Checkpoint("layer_sizes disagree with parameters".into()));
        }
        if params.digest() != ck.digest {
            return Err(ModelError::Checkpoint("digest mismatch".into()));
        }
        Ok(ck)
    }
}
