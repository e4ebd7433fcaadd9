//! Class-balanced loss weighting via the effective number of samples.
//!
//! The crate is organised bottom-up:
//!
//! - [`weighting`]: effective numbers, class weights for the NW / IFW / IEW
//!   schemes, and a Monte Carlo check of the overlap model behind them.
//! - [`losses`]: weighted softmax and sigmoid cross-entropy with analytic
//!   gradients, plus a central-difference gradient checker.
//! - [`model`]: a small fully-connected classifier trained with Adam.
//! - [`data`]: a synthetic long-tailed dataset generator, CSV I/O and a
//!   seeded train/test split.
//! - [`eval`]: per-label precision-recall curves, average precision,
//!   precision-floor thresholds and cross-scheme comparison tables.
//!
//! Everything that draws random numbers takes an explicit `u64` seed and uses
//! ChaCha8, so results are reproducible across platforms.

pub mod data;
pub mod eval;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod rng;
pub mod weighting;

pub use data::{Dataset, LongTailSpec, Task};
pub use eval::{EvalReport, PrCurve};
pub use losses::{Aggregation, LossKind, LossOutput, SigmoidWeighting};
pub use matrix::Matrix;
pub use model::{ModelParams, TrainConfig, TrainHistory};
pub use weighting::{ClassWeights, LabelDistribution, Normalization, WeightingScheme};
