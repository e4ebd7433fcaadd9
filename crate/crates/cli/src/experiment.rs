use std::fs;
use std::path::{Path, PathBuf};

use class_balance::data::{generate, label_counts, load_csv, split};
use class_balance::eval::{compare, evaluate_with_curves, Comparison, EvalReport};
use class_balance::model::{train, Checkpoint};
use class_balance::rng::derive_seed;
use class_balance::weighting::compute_weights;
use class_balance::{ClassWeights, Dataset, LabelDistribution};
use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{self, RunState, MANIFEST_FILE};

/// Train and test halves for one seed.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// The weights a job trained with and the label counts they came from.
#[derive(Debug, Clone, Serialize)]
pub struct WeightsArtifact {
    pub train_counts: IndexMap<String, u64>,
    pub test_counts: IndexMap<String, u64>,
    pub weights: ClassWeights,
}

fn count_map(d: &LabelDistribution) -> IndexMap<String, u64> {
    d.labels().iter().cloned().zip(d.counts().iter().copied()).collect()
}

pub fn seed_dir(seed: u64) -> String {
    format!("seed_{seed}")
}

/// Loads the configured CSV, if any. Generated data is built per seed.
pub fn load_source(cfg: &ExperimentConfig) -> Result<Option<Dataset>, CliError> {
    match &cfg.data.csv {
        Some(path) => load_csv(path).map(Some).map_err(|e| {
            CliError::Runtime(format!("loading dataset {}: {e}", path.display()))
        }),
        None => Ok(None),
    }
}

/// The 90/10-style split for `seed`. Generated data uses a seed derived from
/// the run seed, and the split uses another, so neither shares a stream with
/// the model initialisation.
pub fn seed_data(cfg: &ExperimentConfig, loaded: Option<&Dataset>, seed: u64) -> Result<SeedData, CliError> {
    let data = match (loaded, &cfg.data.generate) {
        (Some(ds), _) => ds.clone(),
        (None, Some(spec)) => generate(spec, derive_seed(seed, "data")).map_err(CliError::usage)?,
        (None, None) => return Err(CliError::Usage("no data source configured".into())),
    };
    let (train, test) = split(&data, cfg.test_fraction, derive_seed(seed, "split")).map_err(CliError::usage)?;
    Ok(SeedData { train, test })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("artifact serializes") + "\n"
}

/// File-name-safe version of a label name.
fn file_stem(index: usize, label: &str) -> String {
    let clean: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{clean}")
}

/// Trains and evaluates one scheme on one seed, writing its artifacts under
/// `dir`.
pub fn run_job(cfg: &ExperimentConfig, data: &SeedData, code: &str, seed: u64, dir: &Path) -> Result<EvalReport, CliError> {
    let scheme = cfg.scheme(code)?;
    let counts = label_counts(&data.train);
    let weights = compute_weights(&counts, scheme, cfg.normalization()).map_err(CliError::usage)?;
    write(
        &dir.join("weights.json"),
        &json(&WeightsArtifact {
            train_counts: count_map(&counts),
            test_counts: count_map(&label_counts(&data.test)),
            weights: weights.clone(),
        }),
    )?;

    let tc = cfg.train_config(scheme, seed);
    let (params, history) =
        train(&data.train, &tc, &weights).map_err(|e| CliError::Runtime(format!("training {code} seed {seed}: {e}")))?;
    write(&dir.join("history.json"), &json(&history))?;
    let (report, curves) = evaluate_with_curves(&params, &data.test, tc.loss_kind, cfg.min_precision, scheme, seed)
        .map_err(|e| CliError::Runtime(format!("evaluating {code} seed {seed}: {e}")))?;
    write(
        &dir.join("model.json"),
        &(Checkpoint::new(params, tc, data.train.label_names().to_vec()).to_json() + "\n"),
    )?;
    write(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    for (i, (label, curve)) in data.test.label_names().iter().zip(&curves).enumerate() {
        if let Some(c) = curve {
            write(&dir.join("curves").join(format!("{}.csv", file_stem(i, label))), &c.to_csv())?;
        }
    }
    Ok(report)
}

/// Prepares `out` for a fresh run. An existing directory must be empty, or
/// hold an earlier run's manifest when `force` is set.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() {
        let non_empty = fs::read_dir(out)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?
            .next()
            .is_some();
        if non_empty {
            if !force {
                return Err(CliError::Usage(format!(
                    "output directory {} is not empty (use --force to replace an earlier run)",
                    out.display()
                )));
            }
            if !out.join(MANIFEST_FILE).exists() {
                return Err(CliError::Usage(format!(
                    "refusing to clear {}: it holds no {MANIFEST_FILE}",
                    out.display()
                )));
            }
            fs::remove_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub reports: Vec<EvalReport>,
    pub comparison: Comparison,
}

/// Runs every seed x scheme job, then writes the comparison and manifest.
///
/// On failure the artifacts written so far are kept and the manifest records
/// the failed state.
pub fn run(cfg: &ExperimentConfig, force: bool) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let out = cfg.out.clone();
    prepare_out_dir(&out, force)?;
    match run_inner(cfg, &out) {
        Ok(outcome) => {
            manifest::write_manifest(&out, RunState::Complete, None)?;
            Ok(outcome)
        }
        Err(e) => {
            manifest::write_manifest(&out, RunState::Failed, Some(e.to_string()))?;
            Err(e)
        }
    }
}

fn run_inner(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome, CliError> {
    write(&out.join("config.json"), &json(cfg))?;
    let loaded = load_source(cfg)?;
    let data: Vec<SeedData> = cfg
        .seeds
        .par_iter()
        .map(|&s| seed_data(cfg, loaded.as_ref(), s))
        .collect::<Result<_, _>>()?;

    let jobs: Vec<(usize, &str)> = (0..cfg.seeds.len())
        .flat_map(|i| cfg.schemes.iter().map(move |c| (i, c.as_str())))
        .collect();
    let results: Vec<Result<EvalReport, CliError>> = jobs
        .par_iter()
        .map(|&(i, code)| {
            let seed = cfg.seeds[i];
            let code = code.to_ascii_uppercase();
            let dir = out.join(seed_dir(seed)).join(&code);
            log::info!("seed {seed} scheme {code}");
            run_job(cfg, &data[i], &code, seed, &dir)
        })
        .collect();
    let reports: Vec<EvalReport> = results.into_iter().collect::<Result<_, _>>()?;

    let comparison = compare(&reports).map_err(CliError::runtime)?;
    write(&out.join("comparison.txt"), &comparison.to_text())?;
    write(&out.join("comparison.csv"), &comparison.to_csv())?;
    write(&out.join("comparison.json"), &json(&comparison))?;
    Ok(RunOutcome {
        out: out.to_path_buf(),
        reports,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_stems_are_safe_and_unique() {
        assert_eq!(file_stem(3, "a b/c"), "003_a_b_c");
        assert_ne!(file_stem(0, "x?"), file_stem(1, "x!"));
    }
}
