use class_balance::data::{load_csv, save_csv, split_indices, Dataset, Task};
use class_balance::eval::{average_precision, pr_curve, select_threshold};
use class_balance::Matrix;
use proptest::prelude::*;

/// Sums precision times recall increment over every distinct threshold,
/// counting hits directly at each one.
fn brute_force_ap(scores: &[f64], truth: &[bool]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = truth.iter().filter(|&&t| t).count() as u64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let mut tp = 0u64;
        let mut predicted = 0u64;
        for (s, &y) in scores.iter().zip(truth) {
            if *s >= t {
                predicted += 1;
                tp += y as u64;
            }
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / predicted as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

#[test]
fn ap_matches_brute_force_on_every_labeling() {
    let scores = [0.91, 0.85, 0.85, 0.6, 0.42, 0.42, 0.3, 0.05];
    for mask in 1u32..256 {
        let truth: Vec<bool> = (0..8).map(|i| mask >> i & 1 == 1).collect();
        let ap = average_precision(&pr_curve(&scores, &truth).unwrap());
        assert_eq!(ap, brute_force_ap(&scores, &truth), "mask {mask:08b}");
    }
}

#[test]
fn hand_case() {
    let c = pr_curve(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap();
    assert!((average_precision(&c) - 5.0 / 6.0).abs() < 1e-15);
    assert_eq!(select_threshold(&c, 0.6), Some(0.3));
    assert_eq!(select_threshold(&c, 0.7), Some(0.9));
    assert_eq!(select_threshold(&c, 1.0), Some(0.9));
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(any::<bool>(), n),
                0..n,
            )
        })
        .prop_map(|(s, mut t, forced)| {
            t[forced] = true;
            (s, t)
        })
}

proptest! {
    #[test]
    fn ap_invariant_under_monotone_transform((scores, truth) in labeled_scores()) {
        let a = average_precision(&pr_curve(&scores, &truth).unwrap());
        let mapped: Vec<f64> = scores.iter().map(|s| (0.5 * s).exp() * 3.0 + 1.0).collect();
        let b = average_precision(&pr_curve(&mapped, &truth).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ap_bounded_by_worst_and_perfect(truth in prop::collection::vec(any::<bool>(), 1..40)) {
        prop_assume!(truth.iter().any(|&t| t));
        let prevalence = truth.iter().filter(|&&t| t).count() as f64 / truth.len() as f64;
        let perfect: Vec<f64> = truth.iter().map(|&t| t as u8 as f64).collect();
        let worst: Vec<f64> = truth.iter().map(|&t| 1.0 - t as u8 as f64).collect();
        let ap_perfect = average_precision(&pr_curve(&perfect, &truth).unwrap());
        let ap_worst = average_precision(&pr_curve(&worst, &truth).unwrap());
        prop_assert_eq!(ap_perfect, 1.0);
        prop_assert!(ap_worst <= prevalence + 1e-12);
    }

    #[test]
    fn curve_is_well_formed((scores, truth) in labeled_scores()) {
        let c = pr_curve(&scores, &truth).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[0].threshold > w[1].threshold);
            prop_assert!(w[0].recall <= w[1].recall);
        }
        prop_assert_eq!(c.points.last().unwrap().recall, 1.0);
        let ap = average_precision(&c);
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn selected_threshold_meets_floor((scores, truth) in labeled_scores(), floor in 0.01f64..=1.0) {
        let c = pr_curve(&scores, &truth).unwrap();
        if let Some(t) = select_threshold(&c, floor) {
            let p = c.points.iter().find(|p| p.threshold == t).unwrap();
            prop_assert!(p.precision >= floor);
        }
    }

    #[test]
    fn split_is_a_partition(n in 2usize..300, frac in 0.05f64..0.95, seed: u64) {
        let test_len = (n as f64 * frac + 0.5).floor() as usize;
        let Ok((train, test)) = split_indices(n, frac, seed) else {
            prop_assert!(test_len == 0 || test_len == n);
            return Ok(());
        };
        prop_assert_eq!(test.len(), test_len);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}

#[test]
fn csv_file_round_trip() {
    let features = Matrix::from_rows(&[[0.25, -1.5], [3.0, 1e-9], [-0.0, 7.125]]).unwrap();
    let labels = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
    let names = vec!["a".to_string(), "b".into(), "c".into()];
    let ds = Dataset::new(features, labels, names, Task::MultiLabel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.csv");
    save_csv(&ds, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back, ds);
}
