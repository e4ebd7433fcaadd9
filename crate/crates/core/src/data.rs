//! Datasets: a synthetic long-tailed generator, CSV I/O and a seeded split.
//!
//! CSV layout is a header `f0,...,f{d-1},L:<name0>,...,L:<name{K-1}>`
//! followed by one row per sample; label cells are exactly `0` or `1`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng;
use crate::weighting::LabelDistribution;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset needs at least one sample")]
    Empty,
    #[error("dataset needs at least one feature column")]
    NoFeatures,
    #[error("dataset needs at least two labels, got {0}")]
    TooFewLabels(usize),
    #[error("{features} feature rows but {labels} label rows")]
    RowMismatch { features: usize, labels: usize },
    #[error("{names} label names for {columns} label columns")]
    NameMismatch { names: usize, columns: usize },
    #[error("duplicate label name {0:?}")]
    DuplicateLabel(String),
    #[error("label entry ({row}, {col}) is {value}, expected 0 or 1")]
    NonBinary { row: usize, col: usize, value: f64 },
    #[error("row {row} has {ones} labels set; single-label rows need exactly one")]
    NotSingleLabel { row: usize, ones: usize },
    #[error("feature values must be finite (row {0})")]
    NonFinite(usize),
    #[error("invalid long-tail spec: {0}")]
    InvalidSpec(String),
    #[error("test fraction {fraction} of {n} samples leaves an empty part")]
    EmptySplit { n: usize, fraction: f64 },
    #[error("no header")]
    NoHeader,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Whether each sample carries exactly one label or any number of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SingleLabel,
    MultiLabel,
}

/// Feature matrix plus a binary label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Matrix,
    label_names: Vec<String>,
    task: Task,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Matrix,
        label_names: Vec<String>,
        task: Task,
    ) -> Result<Self, DataError> {
        if features.rows() == 0 {
            return Err(DataError::Empty);
        }
        if features.cols() == 0 {
            return Err(DataError::NoFeatures);
        }
        if labels.cols() < 2 {
            return Err(DataError::TooFewLabels(labels.cols()));
        }
        if features.rows() != labels.rows() {
            return Err(DataError::RowMismatch {
                features: features.rows(),
                labels: labels.rows(),
            });
        }
        if label_names.len() != labels.cols() {
            return Err(DataError::NameMismatch {
                names: label_names.len(),
                columns: labels.cols(),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for n in &label_names {
            if !seen.insert(n.as_str()) {
                return Err(DataError::DuplicateLabel(n.clone()));
            }
        }
        for (r, row) in features.iter_rows().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite(r));
            }
        }
        for (r, row) in labels.iter_rows().enumerate() {
            let mut ones = 0;
            for (c, &v) in row.iter().enumerate() {
                if v == 1.0 {
                    ones += 1;
                } else if v != 0.0 {
                    return Err(DataError::NonBinary { row: r, col: c, value: v });
                }
            }
            if task == Task::SingleLabel && ones != 1 {
                return Err(DataError::NotSingleLabel { row: r, ones });
            }
        }
        Ok(Self {
            features,
            labels,
            label_names,
            task,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &Matrix {
        &self.labels
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.cols()
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        Self::new(
            self.features.select_rows(indices),
            self.labels.select_rows(indices),
            self.label_names.clone(),
            self.task,
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DataError> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let header: Vec<String> = (0..self.feature_dim())
            .map(|i| format!("f{i}"))
            .chain(self.label_names.iter().map(|n| format!("L:{n}")))
            .collect();
        wr.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for r in 0..self.len() {
            record.clear();
            record.extend(self.features.row(r).iter().map(|v| v.to_string()));
            record.extend(
                self.labels
                    .row(r)
                    .iter()
                    .map(|&v| if v == 1.0 { "1".to_string() } else { "0".to_string() }),
            );
            wr.write_record(&record)?;
        }
        wr.flush().map_err(|e| DataError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    /// Parses CSV. The task is `SingleLabel` when every row has exactly one
    /// label set, `MultiLabel` otherwise.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, DataError> {
        let mut rd = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let mut records = rd.records();
        let header = match records.next() {
            None => return Err(DataError::NoHeader),
            Some(h) => h?,
        };
        if header.len() == 1 && header.get(0) == Some("") {
            return Err(DataError::NoHeader);
        }
        let header_line = header.position().map_or(1, |p| p.line());
        let mut d = 0;
        while header.get(d) == Some(format!("f{d}").as_str()) {
            d += 1;
        }
        let mut names = Vec::new();
        for (i, cell) in header.iter().enumerate().skip(d) {
            match cell.strip_prefix("L:") {
                Some(name) => names.push(name.to_string()),
                None => {
                    return Err(DataError::Parse {
                        line: header_line,
                        message: format!("malformed header cell {i} {cell:?}; expected f{d} or L:<name>"),
                    })
                }
            }
        }
        if d == 0 {
            return Err(DataError::Parse {
                line: header_line,
                message: "malformed header: no feature columns f0..".into(),
            });
        }
        if names.len() < 2 {
            return Err(DataError::Parse {
                line: header_line,
                message: "malformed header: need at least two L:<name> columns".into(),
            });
        }
        let k = names.len();
        let width = d + k;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for rec in records {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != width {
                return Err(DataError::Parse {
                    line,
                    message: format!("expected {width} cells, found {}", rec.len()),
                });
            }
            for (c, cell) in rec.iter().take(d).enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| DataError::Parse {
                    line,
                    message: format!("feature f{c} is not a number: {cell:?}"),
                })?;
                if !v.is_finite() {
                    return Err(DataError::Parse {
                        line,
                        message: format!("feature f{c} is not finite"),
                    });
                }
                feats.push(v);
            }
            for (c, cell) in rec.iter().skip(d).enumerate() {
                labels.push(match cell {
                    "0" => 0.0,
                    "1" => 1.0,
                    other => {
                        return Err(DataError::Parse {
                            line,
                            message: format!("label L:{} must be 0 or 1, found {other:?}", names[c]),
                        })
                    }
                });
            }
        }
        let n = labels.len() / k;
        if n == 0 {
            return Err(DataError::Empty);
        }
        let features = Matrix::from_vec(n, d, feats).expect("sized");
        let labels = Matrix::from_vec(n, k, labels).expect("sized");
        let single = labels
            .iter_rows()
            .all(|r| r.iter().filter(|&&v| v == 1.0).count() == 1);
        let task = if single { Task::SingleLabel } else { Task::MultiLabel };
        Self::new(features, labels, names, task)
    }
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, ds.to_csv_string()).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Dataset::read_csv(std::io::BufReader::new(f))
}

/// Shape of the per-label count profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `count_i = round(largest * ratio^(-i / (K - 1)))`.
    Geometric,
    /// The first half of the labels get `largest`, the rest `largest / ratio`.
    Step,
}

/// Parameters of the synthetic long-tailed generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LongTailSpec {
    pub num_labels: usize,
    pub samples_for_largest: u64,
    /// Largest count over smallest count.
    pub imbalance_ratio: f64,
    pub profile: Profile,
    pub feature_dim: usize,
    /// Norm of every cluster mean.
    pub cluster_separation: f64,
    /// Fraction of samples whose label is replaced by a random wrong one.
    pub label_noise: f64,
    /// Probability that a sample also carries its label's partner `(i + 1) % K`.
    /// Only used for multi-label tasks.
    pub multilabel_cooccurrence: f64,
    pub task: Task,
    /// Optional names; defaults to `label_0, label_1, ...`.
    pub label_names: Option<Vec<String>>,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        Self {
            num_labels: 10,
            samples_for_largest: 1000,
            imbalance_ratio: 20.0,
            profile: Profile::Geometric,
            feature_dim: 16,
            cluster_separation: 2.0,
            label_noise: 0.0,
            multilabel_cooccurrence: 0.0,
            task: Task::MultiLabel,
            label_names: None,
        }
    }
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidSpec(m));
        if self.num_labels < 2 {
            return bad(format!("num_labels must be >= 2, got {}", self.num_labels));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if !(self.imbalance_ratio >= 1.0 && self.imbalance_ratio.is_finite()) {
            return bad(format!("imbalance_ratio must be >= 1, got {}", self.imbalance_ratio));
        }
        if self.samples_for_largest as f64 / self.imbalance_ratio < 1.0 {
            return bad(format!(
                "largest count {} over ratio {} implies a label with fewer than one sample",
                self.samples_for_largest, self.imbalance_ratio
            ));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return bad("cluster_separation must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise must lie in [0, 1), got {}", self.label_noise));
        }
        if !(0.0..=1.0).contains(&self.multilabel_cooccurrence) {
            return bad("multilabel_cooccurrence must lie in [0, 1]".into());
        }
        if self.task == Task::SingleLabel && self.multilabel_cooccurrence != 0.0 {
            return bad("single-label datasets cannot have co-occurring labels".into());
        }
        if let Some(names) = &self.label_names {
            if names.len() != self.num_labels {
                return bad(format!("{} label names for {} labels", names.len(), self.num_labels));
            }
        }
        Ok(())
    }

    /// Per-label sample counts implied by the profile, before noise.
    pub fn counts(&self) -> Result<Vec<u64>, DataError> {
        self.validate()?;
        let k = self.num_labels;
        let largest = self.samples_for_largest as f64;
        let counts = (0..k)
            .map(|i| {
                let c = match self.profile {
                    Profile::Geometric => {
                        largest * self.imbalance_ratio.powf(-(i as f64) / (k - 1) as f64)
                    }
                    Profile::Step if 2 * i < k => largest,
                    Profile::Step => largest / self.imbalance_ratio,
                };
                round_half_up(c).max(1)
            })
            .collect();
        Ok(counts)
    }

    pub fn names(&self) -> Vec<String> {
        self.label_names
            .clone()
            .unwrap_or_else(|| (0..self.num_labels).map(|i| format!("label_{i}")).collect())
    }
}

/// Draws a dataset whose per-label counts follow `spec`'s profile.
///
/// Every label owns a Gaussian cluster with identity covariance whose mean
/// is a random direction scaled to `cluster_separation`. Rows are shuffled.
pub fn generate(spec: &LongTailSpec, seed: u64) -> Result<Dataset, DataError> {
    let counts = spec.counts()?;
    let k = spec.num_labels;
    let d = spec.feature_dim;
    let mut rng = rng::seeded(seed);

    let means: Vec<Vec<f64>> = (0..k)
        .map(|_| loop {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.iter().map(|x| x / norm * spec.cluster_separation).collect();
            }
        })
        .collect();

    let n: usize = counts.iter().map(|&c| c as usize).sum();
    let mut primary = Vec::with_capacity(n);
    let mut feats = Vec::with_capacity(n * d);
    for (label, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            primary.push(label);
            for &m in &means[label] {
                let z: f64 = StandardNormal.sample(&mut rng);
                feats.push(m + z);
            }
        }
    }

    let noisy = round_half_up(spec.label_noise * n as f64) as usize;
    if noisy > 0 {
        for i in index::sample(&mut rng, n, noisy.min(n)).into_iter() {
            let shift = rng.random_range(1..k);
            primary[i] = (primary[i] + shift) % k;
        }
    }

    let mut labels = Matrix::zeros(n, k);
    for (r, &label) in primary.iter().enumerate() {
        labels.set(r, label, 1.0);
        if spec.task == Task::MultiLabel
            && spec.multilabel_cooccurrence > 0.0
            && rng.random::<f64>() < spec.multilabel_cooccurrence
        {
            labels.set(r, (label + 1) % k, 1.0);
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let features = Matrix::from_vec(n, d, feats).expect("sized").select_rows(&order);
    let labels = labels.select_rows(&order);
    Dataset::new(features, labels, spec.names(), spec.task)
}

/// Row indices of a seeded, unstratified `(train, test)` partition. Both parts
/// are returned in ascending order.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let empty = || DataError::EmptySplit { n, fraction: test_fraction };
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(empty());
    }
    let test_n = round_half_up(n as f64 * test_fraction) as usize;
    if test_n == 0 || test_n >= n {
        return Err(empty());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut test = order[..test_n].to_vec();
    let mut train = order[test_n..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Random train/test partition; the default in experiments is 10% test.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), DataError> {
    let (train, test) = split_indices(ds.len(), test_fraction, seed)?;
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

/// Number of rows carrying each label.
pub fn label_counts(ds: &Dataset) -> LabelDistribution {
    let counts = (0..ds.num_labels())
        .map(|c| ds.labels().column(c).iter().filter(|&&v| v == 1.0).count() as u64)
        .collect();
    LabelDistribution::new(ds.label_names.clone(), counts).expect("dataset names are unique")
}
