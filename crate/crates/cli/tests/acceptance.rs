//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use class_balance::eval::{average_precision, pr_curve, select_threshold};
use class_balance::losses::{
    binary_cross_entropy, check_gradients, log_sum_exp, weighted_sigmoid_ce, weighted_softmax_ce, Aggregation,
    SigmoidWeighting,
};
use class_balance::rng::seeded;
use class_balance::weighting::{
    compute_weights, effective_number, effective_number_recurrence, simulate_effective_volume, LabelDistribution,
    Normalization, WeightingScheme,
};
use class_balance::Matrix;
use class_balance_cli::{experiment, ExperimentConfig};
use rand::Rng;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(limit: Duration, t: Duration) -> bool {
    t < limit
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn c1_effective_number() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for beta in [0.0, 0.5, 0.9, 0.99, 0.999] {
        for n in 1..=1000u64 {
            let closed = effective_number(n, beta).unwrap();
            let rec = effective_number_recurrence(n, beta).unwrap();
            worst = worst.max((closed - rec).abs() / rec.abs());
        }
    }
    let spot = effective_number(100, 0.99).unwrap();
    let t = start.elapsed();
    outcome(
        worst <= 1e-9 && (spot - 63.3968).abs() <= 1e-4 && within(Duration::from_secs(1), t),
        format!("max rel err {worst:.2e} (tol 1e-9), E_100(0.99) = {spot:.6} (63.3968 +/- 1e-4), {t:.2?} (< 1 s)"),
    )
}

fn c2_monte_carlo() -> Outcome {
    let start = Instant::now();
    let r = simulate_effective_volume(100, 100, 20_000, 7).unwrap();
    let gap = (r.mean_volume - 63.3968).abs() / 63.3968;
    let t = start.elapsed();
    outcome(
        gap < 0.01 && within(Duration::from_secs(5), t),
        format!("mean volume {:.4} +/- {:.4}, rel gap {gap:.2e} (< 0.01), {t:.2?} (< 5 s)", r.mean_volume, r.stderr),
    )
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_binary(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_bool(0.4) as u8 as f64).collect()).unwrap()
}

fn c3_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(3);
    let (mut softmax_worst, mut sigmoid_worst) = (0.0f64, 0.0f64);
    for i in 0..100 {
        let agg = if i % 2 == 0 { Aggregation::WeightedMean } else { Aggregation::PlainMean };
        let w: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..2.0)).collect();

        let z = random_matrix(&mut rng, 4, 5, -4.0, 4.0);
        let classes: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let e = check_gradients(|z| weighted_softmax_ce(z, &classes, &w, agg), &z, 1e-5).unwrap();
        softmax_worst = softmax_worst.max(e);

        let z = random_matrix(&mut rng, 4, 5, -4.0, 4.0);
        let t = random_binary(&mut rng, 4, 5);
        for mode in [SigmoidWeighting::PerSample, SigmoidWeighting::PerLabel] {
            let e = check_gradients(|z| weighted_sigmoid_ce(z, &t, &w, agg, mode), &z, 1e-5).unwrap();
            sigmoid_worst = sigmoid_worst.max(e);
        }
    }
    let t = start.elapsed();
    outcome(
        softmax_worst < 1e-5 && sigmoid_worst < 1e-5 && within(Duration::from_secs(10), t),
        format!("max rel err softmax {softmax_worst:.2e}, sigmoid {sigmoid_worst:.2e} (tol 1e-5), {t:.2?} (< 10 s)"),
    )
}

fn c4_uniform_weights() -> Outcome {
    let mut rng = seeded(4);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let c = rng.random_range(0.01..10.0);
        let w = vec![c; 5];
        let z = random_matrix(&mut rng, 4, 5, -6.0, 6.0);

        let classes: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
        let plain: f64 = (0..4).map(|r| log_sum_exp(z.row(r)) - z.get(r, classes[r])).sum::<f64>() / 4.0;
        let got = weighted_softmax_ce(&z, &classes, &w, Aggregation::WeightedMean).unwrap().loss;
        worst = worst.max((got - plain).abs());

        let t = random_binary(&mut rng, 4, 5);
        let plain: f64 =
            z.as_slice().iter().zip(t.as_slice()).map(|(&z, &t)| binary_cross_entropy(z, t)).sum::<f64>() / 20.0;
        for mode in [SigmoidWeighting::PerSample, SigmoidWeighting::PerLabel] {
            let got = weighted_sigmoid_ce(&z, &t, &w, Aggregation::WeightedMean, mode).unwrap().loss;
            worst = worst.max((got - plain).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max abs diff {worst:.2e} over 50 batches (tol 1e-12)"))
}

/// Counts hits at every distinct threshold directly.
fn brute_force_ap(scores: &[f64], truth: &[bool]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = truth.iter().filter(|&&t| t).count() as u64;
    let (mut ap, mut prev) = (0.0, 0.0);
    for t in thresholds {
        let (mut tp, mut k) = (0u64, 0u64);
        for (s, &y) in scores.iter().zip(truth) {
            if *s >= t {
                k += 1;
                tp += y as u64;
            }
        }
        let recall = tp as f64 / positives as f64;
        ap += (recall - prev) * (tp as f64 / k as f64);
        prev = recall;
    }
    ap
}

fn c5_ap_oracle() -> Outcome {
    let scores = [0.95, 0.81, 0.73, 0.66, 0.52, 0.37, 0.24, 0.08];
    let mut mismatches = 0;
    for mask in 1u32..256 {
        let truth: Vec<bool> = (0..8).map(|i| mask >> i & 1 == 1).collect();
        if average_precision(&pr_curve(&scores, &truth).unwrap()) != brute_force_ap(&scores, &truth) {
            mismatches += 1;
        }
    }
    let undefined = pr_curve(&scores, &[false; 8]).is_err();
    let hand = average_precision(&pr_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap());
    outcome(
        mismatches == 0 && undefined && (hand - 5.0 / 6.0).abs() <= 1e-15,
        format!(
            "{mismatches} mismatches over the 255 labelings with a positive (exact), all-negative labeling \
             undefined: {undefined}, hand case AP = {hand:.15} (5/6)"
        ),
    )
}

fn c6_threshold_rule() -> Outcome {
    let c = pr_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
    let (t6, t7) = (select_threshold(&c, 0.6), select_threshold(&c, 0.7));
    let mut rng = seeded(6);
    let mut violations = 0;
    let mut returned = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..50);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
        let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        truth[0] = true;
        let curve = pr_curve(&scores, &truth).unwrap();
        let floor = rng.random_range(0.05..=1.0);
        if let Some(t) = select_threshold(&curve, floor) {
            returned += 1;
            let p = curve.points.iter().find(|p| p.threshold == t).unwrap();
            if p.precision < floor {
                violations += 1;
            }
        }
    }
    outcome(
        t6 == Some(0.3) && t7 == Some(0.9) && violations == 0,
        format!("floor 0.6 -> {t6:?}, floor 0.7 -> {t7:?}; {violations} violations in {returned} thresholds over 1000 curves"),
    )
}

fn c7_trend() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&repo_root().join("configs/trend.toml")).unwrap();
    cfg.out = dir.path().join("trend");
    let run = match experiment::run(&cfg, false) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let c = &run.comparison;
    let (nw, iew) = (c.scheme_index("NW").unwrap(), c.scheme_index("IEW").unwrap());
    let minority = &c.terciles[2];
    let delta = minority[iew].unwrap() - minority[nw].unwrap();
    let (m_nw, m_iew) = (c.macro_ap[nw], c.macro_ap[iew]);
    let t = start.elapsed();
    outcome(
        delta >= 0.03 && m_iew >= m_nw - 0.01 && within(Duration::from_secs(180), t),
        format!(
            "minority tercile IEW-NW {delta:+.4} (>= 0.03), macro NW {m_nw:.4} IEW {m_iew:.4} (IEW >= NW - 0.01), \
             seeds {:?}, {t:.2?} (< 3 min)",
            c.seeds
        ),
    )
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    class_balance_cli::manifest::list_files(root)
        .unwrap()
        .into_iter()
        .chain(std::iter::once(class_balance_cli::manifest::MANIFEST_FILE.to_string()))
        .map(|rel| {
            let bytes = fs::read(root.join(&rel)).unwrap();
            (rel, bytes)
        })
        .collect()
}

fn c8_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = repo_root().join("configs/smoke.toml");
    let mut digests = Vec::new();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_cbl"))
            .args(["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap();
        if !o.status.success() {
            return outcome(false, format!("run exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)));
        }
        let manifest = fs::read(out.join(class_balance_cli::manifest::MANIFEST_FILE)).unwrap();
        digests.push(class_balance_cli::manifest::sha256_hex(&manifest));
        trees.push(tree(&out));
    }
    outcome(
        trees[0] == trees[1] && digests[0] == digests[1],
        format!("{} files, manifest sha256 {} vs {}", trees[0].len(), &digests[0][..16], &digests[1][..16]),
    )
}

fn c9_edges() -> Outcome {
    let o = Command::new(env!("CARGO_BIN_EXE_cbl"))
        .args(["weights", "--counts", "0,5", "--scheme", "iew"])
        .output()
        .unwrap();
    let exit = o.status.code();
    let dist = LabelDistribution::from_counts(vec![0, 5]).unwrap();
    let lib_err = compute_weights(&dist, WeightingScheme::IEW, Normalization::SumToOne).is_err();

    let mut all_equal = true;
    for counts in [vec![1, 2, 3], vec![1000, 10, 1], vec![7], vec![5, 5, 5, 5], vec![123_456, 789, 42, 3]] {
        let dist = LabelDistribution::from_counts(counts).unwrap();
        for norm in [Normalization::SumToOne, Normalization::SumToK, Normalization::None] {
            let iew = compute_weights(&dist, WeightingScheme::EffectiveNumber { beta: 1.0 }, norm).unwrap();
            let ifw = compute_weights(&dist, WeightingScheme::IFW, norm).unwrap();
            all_equal &= iew.weights() == ifw.weights();
        }
    }
    outcome(
        exit == Some(2) && lib_err && all_equal,
        format!("CLI exit {exit:?} (2), library error {lib_err}, beta=1 equals IFW exactly: {all_equal}"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("effective-number oracle equivalence", c1_effective_number),
        ("Monte Carlo overlap validation", c2_monte_carlo),
        ("gradient verification", c3_gradients),
        ("uniform-weight reduction", c4_uniform_weights),
        ("AP brute-force oracle", c5_ap_oracle),
        ("precision-floor threshold rule", c6_threshold_rule),
        ("IEW vs NW trend on synthetic long tail", c7_trend),
        ("run determinism", c8_determinism),
        ("zero support and beta = 1 edges", c9_edges),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!("[{}] {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
