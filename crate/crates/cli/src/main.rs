use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use class_balance::data::{self, generate, label_counts, load_csv, LongTailSpec, Profile, Task};
use class_balance::eval::{compare, evaluate_with_curves, EvalReport};
use class_balance::losses::{Aggregation, LossKind, SigmoidWeighting};
use class_balance::model::{train, Checkpoint, TrainConfig};
use class_balance::weighting::{
    beta_from_space_size, compute_weights, effective_number, simulate_effective_volume, LabelDistribution,
    Normalization, OverlapSimulationResult, WeightingScheme,
};
use class_balance_cli::experiment;
use class_balance_cli::manifest;
use class_balance_cli::{CliError, ExperimentConfig, Overrides};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cbl", version, about = "Class-balanced loss weighting experiments")]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Class weights for a list of label counts.
    Weights(WeightsArgs),
    /// Monte Carlo check of the effective-number closed form.
    Simulate(SimulateArgs),
    /// Writes a synthetic long-tailed dataset as CSV.
    Generate(GenerateArgs),
    /// Trains a model on a CSV dataset and writes a checkpoint.
    Train(TrainArgs),
    /// Evaluates a checkpoint on a CSV dataset.
    Eval(EvalArgs),
    /// Runs a full seeded scheme comparison from a TOML config.
    Run(RunArgs),
    /// Builds a comparison table from report files or run directories.
    Compare(CompareArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Nw,
    Ifw,
    Isfw,
    Iew,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    SumToOne,
    SumToK,
    None,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::SumToOne => Normalization::SumToOne,
            NormArg::SumToK => Normalization::SumToK,
            NormArg::None => Normalization::None,
        }
    }
}

#[derive(Args, Clone)]
struct SchemeFlags {
    #[arg(long, value_enum, default_value = "iew")]
    scheme: SchemeArg,
    /// IEW beta in [0, 1].
    #[arg(long, conflicts_with = "space")]
    beta: Option<f64>,
    /// IEW sample-space size N; beta = (N - 1) / N.
    #[arg(long)]
    space: Option<u64>,
    /// IFW / ISFW numerator.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, value_enum, default_value = "sum-to-one")]
    normalization: NormArg,
    /// Same as `--normalization none`.
    #[arg(long)]
    no_normalize: bool,
}

impl SchemeFlags {
    fn scheme(&self) -> Result<WeightingScheme, CliError> {
        let lambda = self.lambda.unwrap_or(1.0);
        let scheme = match self.scheme {
            SchemeArg::Nw => WeightingScheme::NonWeighted,
            SchemeArg::Ifw => WeightingScheme::InverseFrequency { lambda },
            SchemeArg::Isfw => WeightingScheme::InverseSqrtFrequency { lambda },
            SchemeArg::Iew => {
                let beta = match self.space {
                    Some(n) => beta_from_space_size(n).map_err(CliError::usage)?,
                    None => self.beta.unwrap_or(0.99),
                };
                WeightingScheme::EffectiveNumber { beta }
            }
        };
        scheme.validate().map_err(CliError::usage)?;
        Ok(scheme)
    }

    fn normalization(&self) -> Normalization {
        if self.no_normalize {
            Normalization::None
        } else {
            self.normalization.into()
        }
    }
}

#[derive(Args)]
struct WeightsArgs {
    /// Comma-separated per-label sample counts.
    #[arg(long, value_delimiter = ',', required = true)]
    counts: Vec<u64>,
    /// Comma-separated label names; defaults to c0, c1, ...
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[command(flatten)]
    scheme: SchemeFlags,
}

#[derive(Args)]
struct SimulateArgs {
    /// Sample-space size N.
    #[arg(long)]
    space: u64,
    /// Number of samples drawn per trial.
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML file with generator settings; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    num_labels: Option<usize>,
    #[arg(long)]
    largest: Option<u64>,
    #[arg(long)]
    ratio: Option<f64>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    cooccurrence: Option<f64>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Geometric,
    Step,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    SingleLabel,
    MultiLabel,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Softmax,
    Sigmoid,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    WeightedMean,
    PlainMean,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmoidWeightingArg {
    PerSample,
    PerLabel,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "sigmoid")]
    loss: LossArg,
    #[command(flatten)]
    scheme: SchemeFlags,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    aggregation: Option<AggArg>,
    #[arg(long, value_enum)]
    sigmoid_weighting: Option<SigmoidWeightingArg>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Evaluation dataset CSV.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.6)]
    min_precision: f64,
    /// Directory for per-label PR curve CSVs.
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Not needed with `--check`.
    #[arg(long, required_unless_present = "check")]
    config: Option<PathBuf>,
    /// Verify the digests of an existing run directory instead of running.
    #[arg(long)]
    check: Option<PathBuf>,
    /// Comma-separated schemes, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    min_precision: Option<f64>,
    /// Replace an earlier run in the output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Report JSON files, or directories searched for `report.json`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Scheme the deltas are taken against.
    #[arg(long, default_value = "NW")]
    baseline: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Weights(a) => cmd_weights(cli, a),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Generate(a) => cmd_generate(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Run(a) => cmd_run(cli, a),
        Command::Compare(a) => cmd_compare(cli, a),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Writes to `--out` when given, otherwise returns the text for stdout.
fn emit(cli: &Cli, contents: String) -> Result<String, CliError> {
    match &cli.out {
        Some(path) => write_file(path, &contents).map(|_| String::new()),
        None => Ok(contents),
    }
}

fn cmd_weights(cli: &Cli, a: &WeightsArgs) -> Result<String, CliError> {
    let dist = match &a.labels {
        Some(labels) => LabelDistribution::new(labels.clone(), a.counts.clone()),
        None => LabelDistribution::from_counts(a.counts.clone()),
    }
    .map_err(CliError::usage)?;
    let w = compute_weights(&dist, a.scheme.scheme()?, a.scheme.normalization()).map_err(CliError::usage)?;
    let s = match cli.format.unwrap_or(Format::Json) {
        Format::Json => w.to_json() + "\n",
        Format::Text => {
            let width = w.labels().iter().map(|l| l.len()).max().unwrap_or(0);
            let mut s = format!("{}\n", w.scheme());
            for (l, x) in w.labels().iter().zip(w.weights()) {
                let _ = writeln!(s, "{l:<width$}  {x:.12}");
            }
            s
        }
        Format::Csv => {
            let mut s = String::from("label,weight\n");
            for (l, x) in w.labels().iter().zip(w.weights()) {
                let _ = writeln!(s, "{l},{x}");
            }
            s
        }
    };
    emit(cli, s)
}

#[derive(Serialize)]
struct SimulateOutput {
    #[serde(flatten)]
    result: OverlapSimulationResult,
    closed_form: f64,
    relative_gap: f64,
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<String, CliError> {
    let result = simulate_effective_volume(a.space, a.n, a.trials, cli.seed.unwrap_or(0)).map_err(CliError::usage)?;
    let beta = beta_from_space_size(a.space).map_err(CliError::usage)?;
    let closed_form = effective_number(a.n, beta).map_err(CliError::usage)?;
    let out = SimulateOutput {
        result,
        closed_form,
        relative_gap: (result.mean_volume - closed_form).abs() / closed_form,
    };
    let s = match cli.format.unwrap_or(Format::Json) {
        Format::Json => to_json(&out),
        Format::Text => format!(
            "mean volume   {:.6}\nstd. error    {:.6}\nclosed form   {:.6}\nrelative gap  {:.6}\n",
            out.result.mean_volume, out.result.stderr, out.closed_form, out.relative_gap
        ),
        Format::Csv => format!(
            "space_size,n,trials,mean_volume,stderr,closed_form,relative_gap\n{},{},{},{},{},{},{}\n",
            a.space, a.n, a.trials, out.result.mean_volume, out.result.stderr, out.closed_form, out.relative_gap
        ),
    };
    emit(cli, s)
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<String, CliError> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            toml::from_str::<LongTailSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => LongTailSpec::default(),
    };
    if let Some(v) = a.num_labels {
        spec.num_labels = v;
    }
    if let Some(v) = a.largest {
        spec.samples_for_largest = v;
    }
    if let Some(v) = a.ratio {
        spec.imbalance_ratio = v;
    }
    if let Some(v) = a.profile {
        spec.profile = match v {
            ProfileArg::Geometric => Profile::Geometric,
            ProfileArg::Step => Profile::Step,
        };
    }
    if let Some(v) = a.feature_dim {
        spec.feature_dim = v;
    }
    if let Some(v) = a.separation {
        spec.cluster_separation = v;
    }
    if let Some(v) = a.noise {
        spec.label_noise = v;
    }
    if let Some(v) = a.cooccurrence {
        spec.multilabel_cooccurrence = v;
    }
    if let Some(v) = a.task {
        spec.task = match v {
            TaskArg::SingleLabel => Task::SingleLabel,
            TaskArg::MultiLabel => Task::MultiLabel,
        };
    }
    let ds = generate(&spec, cli.seed.unwrap_or(0)).map_err(CliError::usage)?;
    log::info!("generated {} samples, counts {:?}", ds.len(), label_counts(&ds).counts());
    match &cli.out {
        Some(path) => data::save_csv(&ds, path).map(|_| String::new()).map_err(CliError::runtime),
        None => Ok(ds.to_csv_string()),
    }
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<String, CliError> {
    let ds = load_csv(&a.data).map_err(|e| CliError::Runtime(format!("loading dataset {}: {e}", a.data.display())))?;
    let scheme = a.scheme.scheme()?;
    let loss_kind = match a.loss {
        LossArg::Softmax => LossKind::Softmax,
        LossArg::Sigmoid => LossKind::Sigmoid,
    };
    let d = TrainConfig::for_loss(loss_kind, scheme);
    let config = TrainConfig {
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        epochs: a.epochs.unwrap_or(d.epochs),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        seed: cli.seed.unwrap_or(0),
        aggregation: match a.aggregation {
            Some(AggArg::WeightedMean) => Aggregation::WeightedMean,
            Some(AggArg::PlainMean) => Aggregation::PlainMean,
            None => d.aggregation,
        },
        sigmoid_weighting: match a.sigmoid_weighting {
            Some(SigmoidWeightingArg::PerSample) => SigmoidWeighting::PerSample,
            Some(SigmoidWeightingArg::PerLabel) => SigmoidWeighting::PerLabel,
            None => d.sigmoid_weighting,
        },
        hidden_layers: a.hidden.clone().unwrap_or(d.hidden_layers.clone()),
        ..d
    };
    config.validate().map_err(CliError::usage)?;
    let weights = compute_weights(&label_counts(&ds), scheme, a.scheme.normalization()).map_err(CliError::usage)?;
    let (params, history) = train(&ds, &config, &weights).map_err(CliError::runtime)?;
    log::info!(
        "final epoch loss {:?}, digest {}",
        history.epoch_losses.last(),
        history.digest
    );
    emit(cli, Checkpoint::new(params, config, ds.label_names().to_vec()).to_json() + "\n")
}

fn report_text(r: &EvalReport) -> String {
    let width = r.per_label.keys().map(|l| l.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{} seed {}\n{:<width$}  {:>8}  {:>10}  {:>7}\n", r.scheme, r.seed, "label", "ap", "threshold", "support");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for (l, v) in &r.per_label {
        let _ = writeln!(s, "{l:<width$}  {:>8}  {:>10}  {:>7}", opt(v.ap), opt(v.threshold), v.support);
    }
    let _ = writeln!(s, "macro AP {:.4}", r.macro_ap);
    s
}

fn report_csv(r: &EvalReport) -> String {
    let mut s = String::from("label,ap,threshold,support\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (l, v) in &r.per_label {
        let _ = writeln!(s, "{l},{},{},{}", opt(v.ap), opt(v.threshold), v.support);
    }
    s
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<String, CliError> {
    let text = fs::read_to_string(&a.model).map_err(|e| CliError::Runtime(format!("{}: {e}", a.model.display())))?;
    let ck = Checkpoint::from_json(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", a.model.display())))?;
    let ds = load_csv(&a.data).map_err(|e| CliError::Runtime(format!("loading dataset {}: {e}", a.data.display())))?;
    if ds.label_names() != ck.label_names {
        return Err(CliError::Usage(format!(
            "dataset labels {:?} do not match the model's {:?}",
            ds.label_names(),
            ck.label_names
        )));
    }
    if !(a.min_precision > 0.0 && a.min_precision <= 1.0) {
        return Err(CliError::Usage(format!("--min-precision must lie in (0, 1], got {}", a.min_precision)));
    }
    let seed = cli.seed.unwrap_or(ck.config.seed);
    let (report, curves) =
        evaluate_with_curves(&ck.params, &ds, ck.config.loss_kind, a.min_precision, ck.config.scheme, seed)
            .map_err(CliError::usage)?;
    if let Some(dir) = &a.curves {
        for (i, (label, c)) in ds.label_names().iter().zip(&curves).enumerate() {
            if let Some(c) = c {
                write_file(&dir.join(format!("{i:03}_{label}.csv")), &c.to_csv())?;
            }
        }
    }
    let s = match cli.format.unwrap_or(Format::Json) {
        Format::Json => report.to_json() + "\n",
        Format::Text => report_text(&report),
        Format::Csv => report_csv(&report),
    };
    emit(cli, s)
}

fn comparison_output(format: Format, c: &class_balance::eval::Comparison) -> String {
    match format {
        Format::Json => to_json(c),
        Format::Text => c.to_text(),
        Format::Csv => c.to_csv(),
    }
}

fn cmd_run(cli: &Cli, a: &RunArgs) -> Result<String, CliError> {
    if let Some(dir) = &a.check {
        let problems = manifest::check(dir)?;
        if problems.is_empty() {
            let n = manifest::read_manifest(dir)?.files.len();
            return Ok(format!("{}: {n} files verified\n", dir.display()));
        }
        return Err(CliError::Runtime(format!(
            "{} failed verification:\n  {}",
            dir.display(),
            problems.join("\n  ")
        )));
    }
    let path = a.config.as_ref().expect("clap requires --config without --check");
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        schemes: a.schemes.clone(),
        epochs: a.epochs,
        learning_rate: a.lr,
        min_precision: a.min_precision,
    });
    let outcome = experiment::run(&cfg, a.force)?;
    Ok(comparison_output(cli.format.unwrap_or(Format::Text), &outcome.comparison))
}

fn collect_reports(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                collect_reports(&p, out)?;
            } else if p.file_name().is_some_and(|n| n == "report.json") {
                out.push(p);
            }
        }
        Ok(())
    } else {
        out.push(path.to_path_buf());
        Ok(())
    }
}

fn cmd_compare(cli: &Cli, a: &CompareArgs) -> Result<String, CliError> {
    let mut paths = Vec::new();
    for p in &a.inputs {
        collect_reports(p, &mut paths)?;
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let r: EvalReport =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::Usage("no reports found".into()));
    }
    // The comparison's baseline is the first scheme seen.
    let baseline = a.baseline.to_ascii_uppercase();
    reports.sort_by_key(|r| r.scheme.code() != baseline);
    let c = compare(&reports).map_err(CliError::usage)?;
    emit(cli, comparison_output(cli.format.unwrap_or(Format::Text), &c))
}
