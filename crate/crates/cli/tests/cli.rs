use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use class_balance::data::{generate, label_counts};
use class_balance::rng::derive_seed;
use class_balance::weighting::{compute_weights, Normalization};
use class_balance_cli::experiment::seed_data;
use class_balance_cli::ExperimentConfig;
use serde_json::Value;

fn cbl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbl")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn weights_of(v: &Value) -> Vec<f64> {
    v["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

const SMALL: &str = r#"
seeds = [1, 2, 3]
schemes = ["NW", "IEW"]

[data.generate]
num_labels = 10
samples_for_largest = 120
imbalance_ratio = 10.0
feature_dim = 4
label_noise = 0.05

[train]
epochs = 2
learning_rate = 1e-3
hidden_layers = [8]
"#;

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn weights_examples() {
    assert_eq!(weights_of(&json(&cbl(&["weights", "--counts", "50,50", "--scheme", "iew", "--beta", "0.99"]))), [0.5, 0.5]);

    let w = weights_of(&json(&cbl(&["weights", "--counts", "10,90", "--scheme", "ifw", "--no-normalize"])));
    assert!((w[0] - 0.1).abs() < 1e-12 && (w[1] - 1.0 / 90.0).abs() < 1e-12, "{w:?}");

    let o = cbl(&["weights", "--counts", "0,5", "--scheme", "iew"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("IEW"), "{}", stderr(&o));

    assert_eq!(cbl(&["weights", "--counts", "3,x"]).status.code(), Some(2));
    assert_eq!(cbl(&["weights", "--counts", "3,4", "--scheme", "iew", "--beta", "1.5"]).status.code(), Some(2));
    // Non-weighted needs no support.
    assert!(cbl(&["weights", "--counts", "0,5", "--scheme", "nw"]).status.success());
}

#[test]
fn weights_formats_and_space() {
    let by_space = weights_of(&json(&cbl(&["weights", "--counts", "5,50", "--space", "100"])));
    let by_beta = weights_of(&json(&cbl(&["weights", "--counts", "5,50", "--beta", "0.99"])));
    assert_eq!(by_space, by_beta);

    let o = cbl(&["weights", "--counts", "1,3", "--labels", "a,b", "--scheme", "ifw", "--format", "csv"]);
    assert_eq!(stdout(&o), "label,weight\na,0.75\nb,0.25\n");
    assert_eq!(cbl(&["weights", "--counts", "1,3", "--labels", "a"]).status.code(), Some(2));
}

#[test]
fn simulate_examples() {
    let v = json(&cbl(&["simulate", "--space", "100", "--n", "100", "--trials", "20000", "--seed", "7"]));
    assert!((v["closed_form"].as_f64().unwrap() - 63.3968).abs() < 1e-4);
    assert!(v["relative_gap"].as_f64().unwrap() < 0.01);

    for args in [["--space", "1", "--n", "10", "--trials", "100"], ["--space", "100", "--n", "1", "--trials", "10"]] {
        let mut a = vec!["simulate"];
        a.extend(args);
        assert_eq!(json(&cbl(&a))["mean_volume"].as_f64(), Some(1.0));
    }
    assert_eq!(cbl(&["simulate", "--space", "0", "--n", "3"]).status.code(), Some(2));
    assert_eq!(cbl(&["simulate", "--space", "-4", "--n", "3"]).status.code(), Some(2));
}

#[test]
fn run_writes_reports_comparison_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = cbl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("IEW-NW"));

    let mut reports = 0;
    for seed in [1, 2, 3] {
        for scheme in ["NW", "IEW"] {
            let d = out.join(format!("seed_{seed}")).join(scheme);
            for f in ["report.json", "model.json", "weights.json", "history.json"] {
                assert!(d.join(f).is_file(), "{}", d.join(f).display());
            }
            reports += 1;
        }
    }
    assert_eq!(reports, 6);
    for f in ["comparison.txt", "comparison.csv", "comparison.json", "config.json", "MANIFEST.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(csv.starts_with("label,NW,IEW\n"));
    assert!(csv.contains("tercile_minority"));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("MANIFEST.json")).unwrap()).unwrap();
    assert_eq!(manifest["state"], "complete");
    let listed = manifest["files"].as_object().unwrap().len();
    assert_eq!(listed, class_balance_cli::manifest::list_files(&out).unwrap().len());

    let check = cbl(&["run", "--check", out.to_str().unwrap()]);
    assert!(check.status.success(), "{}", stderr(&check));

    // The same directory is refused without --force.
    assert_eq!(cbl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert!(cbl(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--force"]).status.success());

    fs::write(out.join("seed_1/NW/report.json"), "{}").unwrap();
    let check = cbl(&["run", "--check", out.to_str().unwrap()]);
    assert_eq!(check.status.code(), Some(1));
    assert!(stderr(&check).contains("seed_1/NW/report.json"));
}

#[test]
fn weights_come_from_training_split() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = cbl(&["run", "--config", &cfg_path, "--out", out.to_str().unwrap(), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("seed_1").exists(), "--seed overrides the config's seed list");

    let cfg: ExperimentConfig = toml::from_str(SMALL).unwrap();
    let data = seed_data(&cfg, None, 2).unwrap();
    let train_counts = label_counts(&data.train);
    let full = label_counts(&generate(cfg.data.generate.as_ref().unwrap(), derive_seed(2, "data")).unwrap());
    assert_ne!(train_counts.counts(), full.counts());

    let artifact: Value =
        serde_json::from_str(&fs::read_to_string(out.join("seed_2/IEW/weights.json")).unwrap()).unwrap();
    let recorded: Vec<u64> = artifact["train_counts"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(recorded, train_counts.counts());
    let test_total: u64 = artifact["test_counts"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(test_total, label_counts(&data.test).total());

    let expected = compute_weights(&train_counts, cfg.scheme("IEW").unwrap(), Normalization::SumToOne).unwrap();
    let got = weights_of(&artifact["weights"]);
    for (g, e) in got.iter().zip(expected.weights()) {
        assert!((g - e).abs() <= 1e-11 * e.abs(), "{g} vs {e}");
    }
}

#[test]
fn missing_csv_fails_with_path_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[data]\ncsv = \"does-not-exist.csv\"\n");
    let out = dir.path().join("run");
    let o = cbl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does-not-exist.csv"), "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("MANIFEST.json")).unwrap()).unwrap();
    assert_eq!(manifest["state"], "failed");
    assert_eq!(cbl(&["run", "--check", out.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn invalid_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for body in ["schemes = []\n[data.generate]\n", "nonsense", "[data.generate]\n[train]\nbeta = 2.0\n"] {
        let cfg = write_config(dir.path(), body);
        let out = dir.path().join("never");
        assert_eq!(cbl(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(2), "{body}");
    }
    assert_eq!(cbl(&["run"]).status.code(), Some(2));
    assert_eq!(cbl(&["bogus"]).status.code(), Some(2));
}

#[test]
fn generate_train_eval_compare_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let gen = |seed: &str, out: &str| {
        let o = cbl(&[
            "generate", "--num-labels", "4", "--largest", "80", "--ratio", "4", "--feature-dim", "3",
            "--task", "single-label", "--seed", seed, "--out", out,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    gen("1", &p("train.csv"));
    gen("2", &p("test.csv"));
    assert!(fs::read_to_string(p("train.csv")).unwrap().starts_with("f0,f1,f2,L:label_0,"));

    for scheme in ["nw", "iew"] {
        let model = p(&format!("{scheme}.json"));
        let o = cbl(&[
            "train", "--data", &p("train.csv"), "--loss", "softmax", "--scheme", scheme, "--epochs", "3", "--lr",
            "1e-2", "--hidden", "8", "--seed", "5", "--out", &model,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let report = p(&format!("{scheme}_report.json"));
        let o = cbl(&[
            "eval", "--model", &model, "--data", &p("test.csv"), "--curves", &p(&format!("{scheme}_curves")),
            "--out", &report,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
        assert_eq!(r["scheme"], scheme.to_uppercase());
        assert_eq!(r["seed"], 5);
        assert_eq!(r["per_label"].as_object().unwrap().len(), 4);
        assert!(dir.path().join(format!("{scheme}_curves/000_label_0.csv")).is_file());
    }

    let o = cbl(&["compare", &p("iew_report.json"), &p("nw_report.json"), "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("label,NW,IEW\n"), "{}", stdout(&o));

    let o = cbl(&["eval", "--model", &p("nw.json"), "--data", &p("test.csv"), "--format", "text"]);
    assert!(stdout(&o).contains("macro AP"));

    let o = cbl(&["eval", "--model", &p("missing.json"), "--data", &p("test.csv")]);
    assert_eq!(o.status.code(), Some(1));
}
