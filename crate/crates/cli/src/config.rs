use std::path::{Path, PathBuf};

use class_balance::losses::{Aggregation, LossKind, SigmoidWeighting};
use class_balance::model::TrainConfig;
use class_balance::weighting::{beta_from_space_size, Normalization, WeightingScheme};
use class_balance::LongTailSpec;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Where a run's samples come from: exactly one of `csv` or `generate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// Dataset file; a relative path is resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<LongTailSpec>,
}

/// Training and weighting settings; unset fields take the library defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: Option<LossKind>,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden_layers: Option<Vec<usize>>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    /// Forces one reduction for every scheme instead of the per-scheme default.
    pub aggregation: Option<Aggregation>,
    pub sigmoid_weighting: Option<SigmoidWeighting>,
    /// IEW beta; mutually exclusive with `space_size`.
    pub beta: Option<f64>,
    /// IEW sample-space size N, giving `beta = (N - 1) / N`.
    pub space_size: Option<u64>,
    /// IFW / ISFW numerator.
    pub lambda: Option<f64>,
    pub normalization: Option<Normalization>,
}

/// A seeded scheme comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<String>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "default_min_precision")]
    pub min_precision: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Output directory. Not written into the artifacts, so two runs that
    /// differ only here produce identical trees.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
}

fn default_schemes() -> Vec<String> {
    vec!["NW".into(), "IFW".into(), "IEW".into()]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_min_precision() -> f64 {
    0.6
}

fn default_test_fraction() -> f64 {
    0.1
}

fn default_out() -> PathBuf {
    PathBuf::from("cbl-run")
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub schemes: Option<Vec<String>>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub min_precision: Option<f64>,
}

impl ExperimentConfig {
    /// Parses a TOML config. Relative CSV paths are resolved against the
    /// directory of `path`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        if let Some(csv) = &cfg.data.csv {
            if csv.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.data.csv = Some(base.join(csv));
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seeds = vec![seed];
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(schemes) = &o.schemes {
            self.schemes = schemes.clone();
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = Some(epochs);
        }
        if let Some(lr) = o.learning_rate {
            self.train.learning_rate = Some(lr);
        }
        if let Some(p) = o.min_precision {
            self.min_precision = p;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        match (&self.data.csv, &self.data.generate) {
            (Some(_), Some(_)) => return bad("data: set either `csv` or `generate`, not both".into()),
            (None, None) => return bad("data: one of `csv` or `generate` is required".into()),
            (None, Some(spec)) => spec.validate().map_err(CliError::usage)?,
            (Some(_), None) => {}
        }
        if self.schemes.is_empty() {
            return bad("at least one scheme is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = Vec::new();
        for code in &self.schemes {
            let scheme = self.scheme(code)?;
            if seen.contains(&scheme.code()) {
                return bad(format!("scheme {code} listed twice"));
            }
            seen.push(scheme.code());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if !(self.min_precision > 0.0 && self.min_precision <= 1.0) {
            return bad(format!("min_precision must lie in (0, 1], got {}", self.min_precision));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction));
        }
        if self.train.beta.is_some() && self.train.space_size.is_some() {
            return bad("train: set either `beta` or `space_size`, not both".into());
        }
        self.train_config(WeightingScheme::NW, 0)
            .validate()
            .map_err(CliError::usage)
    }

    /// The fully parameterised scheme for a code such as `"IEW"`.
    pub fn scheme(&self, code: &str) -> Result<WeightingScheme, CliError> {
        let base = WeightingScheme::from_code(code)
            .ok_or_else(|| CliError::Usage(format!("unknown scheme {code:?}; expected NW, IFW, ISFW or IEW")))?;
        let t = &self.train;
        let scheme = match base {
            WeightingScheme::NonWeighted => base,
            WeightingScheme::InverseFrequency { lambda } => WeightingScheme::InverseFrequency {
                lambda: t.lambda.unwrap_or(lambda),
            },
            WeightingScheme::InverseSqrtFrequency { lambda } => WeightingScheme::InverseSqrtFrequency {
                lambda: t.lambda.unwrap_or(lambda),
            },
            WeightingScheme::EffectiveNumber { beta } => {
                let beta = match t.space_size {
                    Some(n) => beta_from_space_size(n).map_err(CliError::usage)?,
                    None => t.beta.unwrap_or(beta),
                };
                WeightingScheme::EffectiveNumber { beta }
            }
        };
        scheme.validate().map_err(CliError::usage)?;
        Ok(scheme)
    }

    pub fn normalization(&self) -> Normalization {
        self.train.normalization.unwrap_or_default()
    }

    pub fn loss_kind(&self) -> LossKind {
        self.train.loss.unwrap_or(LossKind::Sigmoid)
    }

    pub fn train_config(&self, scheme: WeightingScheme, seed: u64) -> TrainConfig {
        let t = &self.train;
        let d = TrainConfig::for_loss(self.loss_kind(), scheme);
        TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            epochs: t.epochs.unwrap_or(d.epochs),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            adam_beta1: t.adam_beta1.unwrap_or(d.adam_beta1),
            adam_beta2: t.adam_beta2.unwrap_or(d.adam_beta2),
            adam_epsilon: t.adam_epsilon.unwrap_or(d.adam_epsilon),
            seed,
            aggregation: t.aggregation.unwrap_or(d.aggregation),
            sigmoid_weighting: t.sigmoid_weighting.unwrap_or(d.sigmoid_weighting),
            hidden_layers: t.hidden_layers.clone().unwrap_or(d.hidden_layers),
            ..d
        }
    }
}
