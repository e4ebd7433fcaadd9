//! Precision-recall evaluation.
//!
//! Area under the PR curve is reported as step-wise average precision,
//! `sum_k (recall_k - recall_{k-1}) * precision_k`, not a trapezoidal
//! integral. Softmax models are scored one-vs-rest on class probabilities;
//! sigmoid models on per-label probabilities.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::losses::{self, LossKind};
use crate::matrix::Matrix;
use crate::model::{ModelError, ModelParams};
use crate::weighting::WeightingScheme;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores but {truth} truth values")]
    LengthMismatch { scores: usize, truth: usize },
    #[error("precision-recall curve is undefined without positives")]
    NoPositives,
    #[error("score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("model emits {model} outputs but the dataset has {labels} labels")]
    LabelCount { model: usize, labels: usize },
    #[error("no label has a positive example in the evaluation set")]
    NothingToEvaluate,
    #[error("no reports to compare")]
    NoReports,
    #[error("report {index} has labels {found:?}, expected {expected:?}")]
    LabelSetMismatch {
        index: usize,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, thresholds strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub positives: u64,
    pub negatives: u64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        s
    }
}

/// Precision-recall curve of `scores` against binary `truth`.
///
/// A sample is predicted positive at threshold `t` when its score is `>= t`;
/// tied scores share one point.
pub fn pr_curve(scores: &[f64], truth: &[bool]) -> Result<PrCurve, EvalError> {
    if scores.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            truth: truth.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore { index });
    }
    let positives = truth.iter().filter(|&&t| t).count() as u64;
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    let negatives = truth.len() as u64 - positives;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        });
    }
    Ok(PrCurve {
        points,
        positives,
        negatives,
    })
}

/// Step-wise area under the curve.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for p in &curve.points {
        ap += (p.recall - prev_recall) * p.precision;
        prev_recall = p.recall;
    }
    ap
}

/// The threshold with the highest recall among points whose precision is at
/// least `min_precision`; ties go to the higher threshold.
pub fn select_threshold(curve: &PrCurve, min_precision: f64) -> Option<f64> {
    let mut best: Option<&PrPoint> = None;
    for p in curve.points.iter().filter(|p| p.precision >= min_precision) {
        // Points arrive with decreasing thresholds, so only a strictly
        // larger recall replaces the incumbent.
        if best.is_none_or(|b| p.recall > b.recall) {
            best = Some(p);
        }
    }
    best.map(|p| p.threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResult {
    pub ap: Option<f64>,
    pub threshold: Option<f64>,
    pub support: u64,
}

/// Label-wise AP for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub scheme: WeightingScheme,
    pub seed: u64,
    pub per_label: IndexMap<String, LabelResult>,
    /// Mean of the labels whose AP is defined.
    pub macro_ap: f64,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn label_names(&self) -> Vec<String> {
        self.per_label.keys().cloned().collect()
    }
}

/// Per-label scores: sigmoid probabilities, or softmax probabilities used
/// one-vs-rest.
pub fn scores_from_logits(logits: &Matrix, loss_kind: LossKind) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        match loss_kind {
            LossKind::Sigmoid => row.iter_mut().for_each(|z| *z = losses::sigmoid(*z)),
            LossKind::Softmax => {
                let p = losses::softmax(row);
                row.copy_from_slice(&p);
            }
        }
    }
    out
}

/// Evaluates `params` on `test`, returning the report and each label's curve
/// (absent for labels without test positives).
pub fn evaluate_with_curves(
    params: &ModelParams,
    test: &Dataset,
    loss_kind: LossKind,
    min_precision: f64,
    scheme: WeightingScheme,
    seed: u64,
) -> Result<(EvalReport, Vec<Option<PrCurve>>), EvalError> {
    if params.output_dim() != test.num_labels() {
        return Err(EvalError::LabelCount {
            model: params.output_dim(),
            labels: test.num_labels(),
        });
    }
    let scores = scores_from_logits(&params.forward(test.features())?, loss_kind);
    let mut per_label = IndexMap::new();
    let mut curves = Vec::with_capacity(test.num_labels());
    for (c, name) in test.label_names().iter().enumerate() {
        let truth: Vec<bool> = test.labels().column(c).iter().map(|&v| v == 1.0).collect();
        let support = truth.iter().filter(|&&t| t).count() as u64;
        let result = match pr_curve(&scores.column(c), &truth) {
            Ok(curve) => {
                let r = LabelResult {
                    ap: Some(average_precision(&curve)),
                    threshold: select_threshold(&curve, min_precision),
                    support,
                };
                curves.push(Some(curve));
                r
            }
            Err(EvalError::NoPositives) => {
                log::warn!("label {name:?} has no positives in the evaluation set; AP left undefined");
                curves.push(None);
                LabelResult {
                    ap: None,
                    threshold: None,
                    support,
                }
            }
            Err(e) => return Err(e),
        };
        per_label.insert(name.clone(), result);
    }
    let aps: Vec<f64> = per_label.values().filter_map(|r| r.ap).collect();
    if aps.is_empty() {
        return Err(EvalError::NothingToEvaluate);
    }
    let macro_ap = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok((
        EvalReport {
            scheme,
            seed,
            per_label,
            macro_ap,
        },
        curves,
    ))
}

pub fn evaluate(
    params: &ModelParams,
    test: &Dataset,
    loss_kind: LossKind,
    min_precision: f64,
    scheme: WeightingScheme,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    evaluate_with_curves(params, test, loss_kind, min_precision, scheme, seed).map(|(r, _)| r)
}

/// Support groups used by the comparison table.
pub const TERCILES: [&str; 3] = ["majority", "middle", "minority"];

/// Label x scheme AP matrix with macro and tercile summaries.
///
/// Reports sharing a scheme (different seeds) are averaged. The first scheme
/// seen is the baseline for the delta columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub schemes: Vec<String>,
    /// `ap[label][scheme]`, seed-averaged over reports where defined.
    pub ap: Vec<Vec<Option<f64>>>,
    /// Seed-averaged macro AP per scheme.
    pub macro_ap: Vec<f64>,
    /// Labels in each tercile, by descending mean support.
    pub tercile_labels: [Vec<String>; 3],
    /// `terciles[group][scheme]`: mean AP over the group's labels.
    pub terciles: [Vec<Option<f64>>; 3],
    pub seeds: Vec<u64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Builds a [`Comparison`] from reports over identical label sets.
pub fn compare(reports: &[EvalReport]) -> Result<Comparison, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    let labels = first.label_names();
    for (index, r) in reports.iter().enumerate() {
        let found = r.label_names();
        if found != labels {
            return Err(EvalError::LabelSetMismatch {
                index,
                expected: labels,
                found,
            });
        }
    }
    let mut schemes: Vec<String> = Vec::new();
    for r in reports {
        let code = r.scheme.code().to_string();
        if !schemes.contains(&code) {
            schemes.push(code);
        }
    }
    let mut seeds: Vec<u64> = Vec::new();
    for r in reports {
        if !seeds.contains(&r.seed) {
            seeds.push(r.seed);
        }
    }
    fn of_scheme<'a>(reports: &'a [EvalReport], code: &'a str) -> impl Iterator<Item = &'a EvalReport> {
        reports.iter().filter(move |r| r.scheme.code() == code)
    }

    let ap: Vec<Vec<Option<f64>>> = labels
        .iter()
        .map(|l| {
            schemes
                .iter()
                .map(|s| mean(of_scheme(reports, s).filter_map(|r| r.per_label[l].ap)))
                .collect()
        })
        .collect();
    let macro_ap = schemes
        .iter()
        .map(|s| mean(of_scheme(reports, s).map(|r| r.macro_ap)).expect("scheme has a report"))
        .collect();

    let support: Vec<f64> = labels
        .iter()
        .map(|l| mean(reports.iter().map(|r| r.per_label[l].support as f64)).unwrap_or(0.0))
        .collect();
    let mut by_support: Vec<usize> = (0..labels.len()).collect();
    by_support.sort_by(|&a, &b| support[b].total_cmp(&support[a]));
    let k = labels.len();
    let outer = (k as f64 / 3.0 + 0.5).floor() as usize;
    let groups = [
        &by_support[..outer],
        &by_support[outer..k - outer],
        &by_support[k - outer..],
    ];
    let tercile_labels = groups.map(|g| g.iter().map(|&i| labels[i].clone()).collect());
    let terciles = groups.map(|g| {
        (0..schemes.len())
            .map(|s| mean(g.iter().filter_map(|&i| ap[i][s])))
            .collect()
    });

    Ok(Comparison {
        labels,
        schemes,
        ap,
        macro_ap,
        tercile_labels,
        terciles,
        seeds,
    })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or(String::new(), |x| format!("{x:.prec$}"))
}

impl Comparison {
    pub fn scheme_index(&self, code: &str) -> Option<usize> {
        self.schemes.iter().position(|s| s == code)
    }

    /// `value[scheme] - value[baseline]` for a row of optional values.
    fn deltas(row: &[Option<f64>]) -> Vec<Option<f64>> {
        row.iter()
            .skip(1)
            .map(|v| match (v, row[0]) {
                (Some(a), Some(b)) => Some(a - b),
                _ => None,
            })
            .collect()
    }

    pub fn macro_deltas(&self) -> Vec<f64> {
        self.macro_ap.iter().skip(1).map(|v| v - self.macro_ap[0]).collect()
    }

    /// `tercile_deltas()[group][j]` is scheme `j + 1` minus the baseline.
    pub fn tercile_deltas(&self) -> [Vec<Option<f64>>; 3] {
        self.terciles.clone().map(|row| Self::deltas(&row))
    }

    pub fn label_deltas(&self) -> Vec<Vec<Option<f64>>> {
        self.ap.iter().map(|row| Self::deltas(row)).collect()
    }

    /// `label,NW,IEW,...` rows, then macro and tercile rows.
    pub fn to_csv(&self) -> String {
        let mut s = format!("label,{}\n", self.schemes.join(","));
        let mut row = |name: &str, vals: &[Option<f64>]| {
            let cells: Vec<String> = vals.iter().map(|v| fmt_opt(*v, 6)).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        };
        for (l, vals) in self.labels.iter().zip(&self.ap) {
            row(l, vals);
        }
        let macro_row: Vec<Option<f64>> = self.macro_ap.iter().copied().map(Some).collect();
        row("macro_ap", &macro_row);
        for (name, vals) in TERCILES.iter().zip(&self.terciles) {
            row(&format!("tercile_{name}"), vals);
        }
        s
    }

    /// Aligned plain-text table with delta columns against the baseline.
    pub fn to_text(&self) -> String {
        let base = &self.schemes[0];
        let mut headers: Vec<String> = self.schemes.clone();
        headers.extend(self.schemes.iter().skip(1).map(|s| format!("{s}-{base}")));
        let width = self
            .labels
            .iter()
            .map(String::len)
            .chain(TERCILES.iter().map(|t| t.len() + 8))
            .max()
            .unwrap_or(5)
            .max(8);
        let col = headers.iter().map(String::len).max().unwrap_or(0).max(8);

        let mut s = String::new();
        let _ = write!(s, "{:<width$}", "label");
        for h in &headers {
            let _ = write!(s, "  {h:>col$}");
        }
        s.push('\n');
        let mut line = |name: &str, vals: &[Option<f64>]| {
            let _ = write!(s, "{name:<width$}");
            let deltas = Self::deltas(vals);
            for v in vals.iter().copied() {
                let _ = write!(s, "  {:>col$}", fmt_opt(v, 4));
            }
            for d in deltas {
                let _ = write!(s, "  {:>col$}", d.map_or(String::new(), |x| format!("{x:+.4}")));
            }
            s.push('\n');
        };
        for (l, vals) in self.labels.iter().zip(&self.ap) {
            line(l, vals);
        }
        let macro_row: Vec<Option<f64>> = self.macro_ap.iter().copied().map(Some).collect();
        line("macro_ap", &macro_row);
        for (name, vals) in TERCILES.iter().zip(&self.terciles) {
            line(&format!("tercile:{name}"), vals);
        }
        s
    }
}
