//! Class-weighted cross-entropy losses with analytic gradients.
//!
//! Two paths are provided:
//!
//! - [`weighted_softmax_ce`] for single-label (multi-class) batches. Sample `j`
//!   with class `y_j` contributes `w[y_j] * -log softmax(z_j)[y_j]`.
//! - [`weighted_sigmoid_ce`] for multi-hot batches. Every (sample, label) pair
//!   contributes `a_ji * bce(z_ji, t_ji)`. With [`SigmoidWeighting::PerSample`]
//!   `a_ji = s_j`, the mean weight of sample `j`'s positive labels (the mean of
//!   all weights for a row with no positives). With
//!   [`SigmoidWeighting::PerLabel`] `a_ji = w[i]`, scaling each label column.
//!
//! [`Aggregation::WeightedMean`] divides the summed loss by the total weight
//! mass of the batch: `sum_j w[y_j]` for softmax, `K * sum_j s_j` or
//! `batch * sum_i w[i]` for the two sigmoid modes. [`Aggregation::PlainMean`]
//! divides by the batch size.
//!
//! All reductions run sequentially in index order so results are bitwise
//! reproducible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("logits have {logits} rows but targets describe {targets} samples")]
    BatchMismatch { logits: usize, targets: usize },
    #[error("logits have {logits} columns but {weights} class weights were given")]
    WeightMismatch { logits: usize, weights: usize },
    #[error("multi-hot targets have {targets} columns but logits have {logits}")]
    TargetWidthMismatch { logits: usize, targets: usize },
    #[error("target class {class} out of range for {classes} classes (sample {sample})")]
    ClassOutOfRange {
        sample: usize,
        class: usize,
        classes: usize,
    },
    #[error("target entry ({row}, {col}) is {value}; multi-hot targets must be 0 or 1")]
    NonBinaryTarget { row: usize, col: usize, value: f64 },
    #[error("total weight of the batch is zero; weighted mean is undefined")]
    ZeroWeightMass,
    #[error("finite-difference epsilon {0} outside [1e-8, 1e-3]")]
    InvalidEpsilon(f64),
}

/// Which output head and loss a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Softmax cross-entropy, top-1 prediction.
    Softmax,
    /// Per-label sigmoid cross-entropy, independent thresholds.
    Sigmoid,
}

/// Batch reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum of weighted losses divided by the batch's total weight.
    WeightedMean,
    /// Sum of weighted losses divided by the batch size.
    PlainMean,
}

impl Aggregation {
    /// Default reduction for a scheme: weighted mean for inverse frequency,
    /// plain mean otherwise.
    pub fn default_for(scheme: &crate::weighting::WeightingScheme) -> Self {
        use crate::weighting::WeightingScheme::*;
        match scheme {
            InverseFrequency { .. } | InverseSqrtFrequency { .. } => Self::WeightedMean,
            NonWeighted | EffectiveNumber { .. } => Self::PlainMean,
        }
    }
}

/// How class weights enter the multi-hot sigmoid loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmoidWeighting {
    /// Every label term of a sample is scaled by the mean weight of the
    /// sample's positive labels.
    #[default]
    PerSample,
    /// Label `i`'s term is scaled by `w[i]` for every sample.
    PerLabel,
}

/// Targets for one batch.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTarget {
    SingleClass(Vec<usize>),
    MultiHot(Matrix),
}

impl BatchTarget {
    pub fn len(&self) -> usize {
        match self {
            Self::SingleClass(v) => v.len(),
            Self::MultiHot(m) => m.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scalar loss and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_logits: Matrix,
}

/// Dispatches to the softmax or sigmoid loss depending on the target kind.
/// `mode` only affects the sigmoid path.
pub fn weighted_loss(
    logits: &Matrix,
    targets: &BatchTarget,
    weights: &[f64],
    aggregation: Aggregation,
    mode: SigmoidWeighting,
) -> Result<LossOutput, LossError> {
    match targets {
        BatchTarget::SingleClass(t) => weighted_softmax_ce(logits, t, weights, aggregation),
        BatchTarget::MultiHot(t) => weighted_sigmoid_ce(logits, t, weights, aggregation, mode),
    }
}

fn check_common(logits: &Matrix, batch: usize, weights: &[f64]) -> Result<(), LossError> {
    if logits.rows() == 0 {
        return Err(LossError::EmptyBatch);
    }
    if logits.rows() != batch {
        return Err(LossError::BatchMismatch {
            logits: logits.rows(),
            targets: batch,
        });
    }
    if logits.cols() != weights.len() {
        return Err(LossError::WeightMismatch {
            logits: logits.cols(),
            weights: weights.len(),
        });
    }
    Ok(())
}

/// Weighted softmax cross-entropy over single-class targets.
pub fn weighted_softmax_ce(
    logits: &Matrix,
    targets: &[usize],
    weights: &[f64],
    aggregation: Aggregation,
) -> Result<LossOutput, LossError> {
    check_common(logits, targets.len(), weights)?;
    let (batch, classes) = logits.shape();
    for (sample, &class) in targets.iter().enumerate() {
        if class >= classes {
            return Err(LossError::ClassOutOfRange {
                sample,
                class,
                classes,
            });
        }
    }
    let denom = match aggregation {
        Aggregation::PlainMean => batch as f64,
        Aggregation::WeightedMean => targets.iter().map(|&y| weights[y]).sum(),
    };
    if denom <= 0.0 {
        return Err(LossError::ZeroWeightMass);
    }

    let mut total = 0.0;
    let mut grad = Matrix::zeros(batch, classes);
    for (j, &y) in targets.iter().enumerate() {
        let z = logits.row(j);
        let lse = log_sum_exp(z);
        let w = weights[y];
        total += w * (lse - z[y]);
        let scale = w / denom;
        let g = grad.row_mut(j);
        for (c, (gc, &zc)) in g.iter_mut().zip(z).enumerate() {
            let p = (zc - lse).exp();
            let onehot = if c == y { 1.0 } else { 0.0 };
            *gc = scale * (p - onehot);
        }
    }
    Ok(LossOutput {
        loss: total / denom,
        grad_logits: grad,
    })
}

/// Weighted sigmoid (binary) cross-entropy over multi-hot targets.
pub fn weighted_sigmoid_ce(
    logits: &Matrix,
    targets: &Matrix,
    weights: &[f64],
    aggregation: Aggregation,
    mode: SigmoidWeighting,
) -> Result<LossOutput, LossError> {
    check_common(logits, targets.rows(), weights)?;
    let (batch, labels) = logits.shape();
    if targets.cols() != labels {
        return Err(LossError::TargetWidthMismatch {
            logits: labels,
            targets: targets.cols(),
        });
    }
    for r in 0..batch {
        for (c, &t) in targets.row(r).iter().enumerate() {
            if t != 0.0 && t != 1.0 {
                return Err(LossError::NonBinaryTarget {
                    row: r,
                    col: c,
                    value: t,
                });
            }
        }
    }
    let sample_weights: Vec<f64> = match mode {
        SigmoidWeighting::PerSample => targets.iter_rows().map(|t| sample_weight(t, weights)).collect(),
        SigmoidWeighting::PerLabel => Vec::new(),
    };
    let denom = match (aggregation, mode) {
        (Aggregation::PlainMean, _) => batch as f64,
        (Aggregation::WeightedMean, SigmoidWeighting::PerLabel) => {
            batch as f64 * weights.iter().sum::<f64>()
        }
        (Aggregation::WeightedMean, SigmoidWeighting::PerSample) => {
            labels as f64 * sample_weights.iter().sum::<f64>()
        }
    };
    if denom <= 0.0 {
        return Err(LossError::ZeroWeightMass);
    }

    let mut total = 0.0;
    let mut grad = Matrix::zeros(batch, labels);
    for (j, (z, t)) in logits.iter_rows().zip(targets.iter_rows()).enumerate() {
        let g = grad.row_mut(j);
        for i in 0..labels {
            let a = match mode {
                SigmoidWeighting::PerSample => sample_weights[j],
                SigmoidWeighting::PerLabel => weights[i],
            };
            total += a * binary_cross_entropy(z[i], t[i]);
            g[i] = a * (sigmoid(z[i]) - t[i]) / denom;
        }
    }
    Ok(LossOutput {
        loss: total / denom,
        grad_logits: grad,
    })
}

/// Mean weight of the row's positive labels, or of all labels if it has none.
pub fn sample_weight(targets: &[f64], weights: &[f64]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (&t, &w) in targets.iter().zip(weights) {
        if t == 1.0 {
            sum += w;
            n += 1;
        }
    }
    if n == 0 {
        weights.iter().sum::<f64>() / weights.len() as f64
    } else {
        sum / n as f64
    }
}

/// `log(sum(exp(z)))`, max-shifted.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of one row.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|&v| (v - lse).exp()).collect()
}

/// Logistic function without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-(t log sigmoid(z) + (1 - t) log sigmoid(-z))` in softplus form.
pub fn binary_cross_entropy(z: f64, t: f64) -> f64 {
    z.max(0.0) - t * z + (-z.abs()).exp().ln_1p()
}

/// Largest relative error between the analytic logit gradient of `loss_fn` at
/// `logits` and a central finite difference with step `epsilon`.
///
/// The relative error of one entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn check_gradients<F>(loss_fn: F, logits: &Matrix, epsilon: f64) -> Result<f64, LossError>
where
    F: Fn(&Matrix) -> Result<LossOutput, LossError>,
{
    if !(1e-8..=1e-3).contains(&epsilon) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    let analytic = loss_fn(logits)?.grad_logits;
    let mut probe = logits.clone();
    let mut worst = 0.0f64;
    for idx in 0..logits.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + epsilon;
        let up = loss_fn(&probe)?.loss;
        probe.as_mut_slice()[idx] = orig - epsilon;
        let down = loss_fn(&probe)?.loss;
        probe.as_mut_slice()[idx] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic.as_slice()[idx], numeric));
    }
    Ok(worst)
}

pub(crate) fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
