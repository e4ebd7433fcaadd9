//! Effective numbers of samples and per-class loss weights.
//!
//! The effective number of `n` samples drawn from a space of `N` prototypes is
//! `E_n = (1 - beta^n) / (1 - beta)` with `beta = (N - 1) / N`. It is the
//! expected covered volume when each new sample overlaps the already covered
//! region with probability `E_{n-1} / N`, which gives the recurrence
//! `E_n = 1 + beta * E_{n-1}` with `E_1 = 1`.
//!
//! Class weights come in four flavours ([`WeightingScheme`]): uniform,
//! `lambda / n_i`, `lambda / sqrt(n_i)` and `1 / E_{n_i}`, each followed by one
//! of three [`Normalization`] modes.

use std::collections::HashSet;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::rng;

/// Above this many samples `beta^n` is evaluated as `exp(n ln beta)`.
const DIRECT_POWER_LIMIT: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("beta must lie in [0, 1], got {0}")]
    InvalidBeta(f64),
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("sample space size N must be at least 1")]
    ZeroSpaceSize,
    #[error("the recurrence is defined for n >= 1")]
    ZeroSamples,
    #[error("simulation needs at least one trial")]
    ZeroTrials,
    #[error("label distribution must contain at least one label")]
    EmptyDistribution,
    #[error("{labels} label names but {counts} counts")]
    LengthMismatch { labels: usize, counts: usize },
    #[error("duplicate label name {0:?}")]
    DuplicateLabel(String),
    #[error("label {label:?} has zero support; the {scheme} scheme needs every count > 0")]
    ZeroSupport { label: String, scheme: &'static str },
}

/// Effective number of samples `(1 - beta^n) / (1 - beta)`.
///
/// `beta = 1` is the limit and returns `n`; `n = 0` returns `0`.
pub fn effective_number(n: u64, beta: f64) -> Result<f64, WeightError> {
    check_beta(beta)?;
    if n == 0 {
        return Ok(0.0);
    }
    if beta == 1.0 {
        return Ok(n as f64);
    }
    let one_minus_pow = if n > DIRECT_POWER_LIMIT {
        if beta == 0.0 {
            1.0
        } else {
            -(n as f64 * beta.ln()).exp_m1()
        }
    } else {
        1.0 - beta.powi(n as i32)
    };
    Ok(one_minus_pow / (1.0 - beta))
}

/// Effective number by iterating `E_k = 1 + beta * E_{k-1}` from `E_1 = 1`.
///
/// O(n); used as an oracle for [`effective_number`].
pub fn effective_number_recurrence(n: u64, beta: f64) -> Result<f64, WeightError> {
    check_beta(beta)?;
    if n == 0 {
        return Err(WeightError::ZeroSamples);
    }
    let mut e = 1.0;
    for _ in 1..n {
        e = 1.0 + beta * e;
    }
    Ok(e)
}

/// `beta = (N - 1) / N` for a sample space of `N` prototypes.
pub fn beta_from_space_size(space_size: u64) -> Result<f64, WeightError> {
    if space_size == 0 {
        return Err(WeightError::ZeroSpaceSize);
    }
    Ok((space_size - 1) as f64 / space_size as f64)
}

fn check_beta(beta: f64) -> Result<(), WeightError> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(WeightError::InvalidBeta(beta))
    }
}

fn check_lambda(lambda: f64) -> Result<(), WeightError> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(WeightError::InvalidLambda(lambda))
    }
}

/// Per-label support counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDistribution {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl LabelDistribution {
    pub fn new(labels: Vec<String>, counts: Vec<u64>) -> Result<Self, WeightError> {
        if labels.len() != counts.len() {
            return Err(WeightError::LengthMismatch {
                labels: labels.len(),
                counts: counts.len(),
            });
        }
        if labels.is_empty() {
            return Err(WeightError::EmptyDistribution);
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(WeightError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels, counts })
    }

    /// Distribution with generated names `c0, c1, ...`.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self, WeightError> {
        let labels = (0..counts.len()).map(|i| format!("c{i}")).collect();
        Self::new(labels, counts)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// How raw per-class weights are derived from support counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "SchemeFields", try_from = "SchemeFields")]
pub enum WeightingScheme {
    /// Every class weighted equally (NW).
    NonWeighted,
    /// `lambda / n_i` (IFW).
    InverseFrequency { lambda: f64 },
    /// `lambda / sqrt(n_i)`.
    InverseSqrtFrequency { lambda: f64 },
    /// `1 / E_{n_i}` (IEW).
    EffectiveNumber { beta: f64 },
}

impl WeightingScheme {
    /// Default effective-number scheme, `beta = 0.99`.
    pub const IEW: Self = Self::EffectiveNumber { beta: 0.99 };
    pub const IFW: Self = Self::InverseFrequency { lambda: 1.0 };
    pub const NW: Self = Self::NonWeighted;

    /// Short code used in reports and tables: `NW`, `IFW`, `ISFW` or `IEW`.
    pub fn code(&self) -> &'static str {
        match self {
            Self::NonWeighted => "NW",
            Self::InverseFrequency { .. } => "IFW",
            Self::InverseSqrtFrequency { .. } => "ISFW",
            Self::EffectiveNumber { .. } => "IEW",
        }
    }

    /// Parses a code (case-insensitive) with default parameters.
    pub fn from_code(code: &str) -> Option<Self> {
        match code.to_ascii_uppercase().as_str() {
            "NW" => Some(Self::NW),
            "IFW" => Some(Self::IFW),
            "ISFW" => Some(Self::InverseSqrtFrequency { lambda: 1.0 }),
            "IEW" => Some(Self::IEW),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), WeightError> {
        match *self {
            Self::NonWeighted => Ok(()),
            Self::InverseFrequency { lambda } | Self::InverseSqrtFrequency { lambda } => {
                check_lambda(lambda)
            }
            Self::EffectiveNumber { beta } => check_beta(beta),
        }
    }
}

impl fmt::Display for WeightingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonWeighted => write!(f, "NW"),
            Self::InverseFrequency { lambda } => write!(f, "IFW(lambda={lambda})"),
            Self::InverseSqrtFrequency { lambda } => write!(f, "ISFW(lambda={lambda})"),
            Self::EffectiveNumber { beta } => write!(f, "IEW(beta={beta})"),
        }
    }
}

/// Flat JSON form of a scheme: `{"scheme": "IEW", "beta": 0.99}`.
#[derive(Serialize, Deserialize)]
struct SchemeFields {
    scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
}

impl From<WeightingScheme> for SchemeFields {
    fn from(s: WeightingScheme) -> Self {
        let (beta, lambda) = match s {
            WeightingScheme::NonWeighted => (None, None),
            WeightingScheme::InverseFrequency { lambda }
            | WeightingScheme::InverseSqrtFrequency { lambda } => (None, Some(lambda)),
            WeightingScheme::EffectiveNumber { beta } => (Some(beta), None),
        };
        Self {
            scheme: s.code().to_string(),
            beta,
            lambda,
        }
    }
}

impl TryFrom<SchemeFields> for WeightingScheme {
    type Error = String;

    fn try_from(f: SchemeFields) -> Result<Self, Self::Error> {
        let scheme = match f.scheme.to_ascii_uppercase().as_str() {
            "NW" => Self::NonWeighted,
            "IFW" => Self::InverseFrequency {
                lambda: f.lambda.unwrap_or(1.0),
            },
            "ISFW" => Self::InverseSqrtFrequency {
                lambda: f.lambda.unwrap_or(1.0),
            },
            "IEW" => Self::EffectiveNumber {
                beta: f.beta.unwrap_or(0.99),
            },
            other => return Err(format!("unknown weighting scheme {other:?}")),
        };
        scheme.validate().map_err(|e| e.to_string())?;
        Ok(scheme)
    }
}

/// What the raw weight vector is rescaled to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    SumToOne,
    SumToK,
    None,
}

/// A weight per label together with the scheme that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    #[serde(flatten)]
    scheme: WeightingScheme,
    normalization: Normalization,
    labels: Vec<String>,
    #[serde(serialize_with = "serialize_12_digits")]
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn scheme(&self) -> WeightingScheme {
        self.scheme
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }
}

/// Rounds to 12 significant digits, so the shortest decimal form has at most 12.
fn round_12_digits(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn serialize_12_digits<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&x| round_12_digits(x)))
}

/// Computes one weight per label of `dist` under `scheme`, then normalises.
pub fn compute_weights(
    dist: &LabelDistribution,
    scheme: WeightingScheme,
    normalization: Normalization,
) -> Result<ClassWeights, WeightError> {
    scheme.validate()?;
    if scheme != WeightingScheme::NonWeighted {
        if let Some(i) = dist.counts.iter().position(|&c| c == 0) {
            return Err(WeightError::ZeroSupport {
                label: dist.labels[i].clone(),
                scheme: scheme.code(),
            });
        }
    }
    let raw: Vec<f64> = dist
        .counts
        .iter()
        .map(|&n| match scheme {
            WeightingScheme::NonWeighted => Ok(1.0),
            WeightingScheme::InverseFrequency { lambda } => Ok(lambda / n as f64),
            WeightingScheme::InverseSqrtFrequency { lambda } => Ok(lambda / (n as f64).sqrt()),
            WeightingScheme::EffectiveNumber { beta } => effective_number(n, beta).map(|e| 1.0 / e),
        })
        .collect::<Result<_, _>>()?;

    let k = raw.len() as f64;
    let sum: f64 = raw.iter().sum();
    let weights = match normalization {
        Normalization::SumToOne => raw.iter().map(|w| w / sum).collect(),
        Normalization::SumToK => raw.iter().map(|w| w * k / sum).collect(),
        Normalization::None => raw,
    };
    Ok(ClassWeights {
        scheme,
        normalization,
        labels: dist.labels.clone(),
        weights,
    })
}

/// Outcome of [`simulate_effective_volume`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSimulationResult {
    pub mean_volume: f64,
    pub stderr: f64,
    pub trials: u64,
    pub n: u64,
    pub space_size: u64,
}

/// Monte Carlo estimate of the expected covered volume after `n` samples.
///
/// Each trial adds samples one at a time; a sample overlaps the covered region
/// with probability `volume / N` and otherwise grows it by one.
pub fn simulate_effective_volume(
    space_size: u64,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<OverlapSimulationResult, WeightError> {
    if space_size == 0 {
        return Err(WeightError::ZeroSpaceSize);
    }
    if n == 0 {
        return Err(WeightError::ZeroSamples);
    }
    if trials == 0 {
        return Err(WeightError::ZeroTrials);
    }
    let mut rng = rng::seeded(seed);
    let space = space_size as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let mut volume = 0u64;
        for _ in 0..n {
            let p_overlap = volume as f64 / space;
            if rng.random::<f64>() >= p_overlap {
                volume += 1;
            }
        }
        let v = volume as f64;
        sum += v;
        sum_sq += v * v;
    }
    let t = trials as f64;
    let mean = sum / t;
    let stderr = if trials > 1 {
        let var = ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0);
        (var / t).sqrt()
    } else {
        0.0
    };
    Ok(OverlapSimulationResult {
        mean_volume: mean,
        stderr,
        trials,
        n,
        space_size,
    })
}
