use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn set(id: &[f64], ood: &[f64]) -> ScoredSet {
    ScoredSet::from_groups(id, ood).unwrap()
}

fn auroc_pairs(s: &ScoredSet) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &a) in s.scores.iter().enumerate() {
        for (j, &b) in s.scores.iter().enumerate() {
            if s.is_id[i] && !s.is_id[j] {
                pairs += 1.0;
                if a < b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Distinct thresholds ascending with (tp, fp) counted from scratch.
fn sweep(s: &ScoredSet) -> Vec<(f64, usize, usize)> {
    let mut thresholds = s.scores.clone();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds
        .into_iter()
        .map(|t| {
            let tp = (0..s.scores.len())
                .filter(|&i| s.is_id[i] && s.scores[i] <= t)
                .count();
            let fp = (0..s.scores.len())
                .filter(|&i| !s.is_id[i] && s.scores[i] <= t)
                .count();
            (t, tp, fp)
        })
        .collect()
}

fn aupr_sweep(s: &ScoredSet) -> f64 {
    let p = s.positives() as f64;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (_, tp, fp) in sweep(s) {
        let recall = tp as f64 / p;
        if recall > prev_recall {
            area += (recall - prev_recall) * tp as f64 / (tp + fp) as f64;
            prev_recall = recall;
        }
    }
    area
}

fn fpr_sweep(s: &ScoredSet, target: f64) -> f64 {
    let (p, n) = (s.positives() as f64, s.negatives() as f64);
    sweep(s)
        .into_iter()
        .find(|&(_, tp, _)| tp as f64 / p >= target)
        .map(|(_, _, fp)| fp as f64 / n)
        .unwrap()
}

fn random_set(rng: &mut ChaCha8Rng) -> ScoredSet {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(1..=40);
    let mut is_id: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    is_id[0] = true;
    is_id[1] = false;
    let scores = (0..n)
        .map(|_| f64::from(rng.random_range(0..levels)) * 0.5)
        .collect();
    ScoredSet::new(scores, is_id).unwrap()
}

#[test]
fn perfect_separation() {
    let s = set(&[0.0; 5], &[1.0; 7]);
    assert_eq!(auroc(&s).unwrap(), 1.0);
    assert_eq!(aupr(&s).unwrap(), 1.0);
    assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), 0.0);
    assert_eq!(fpr_at_tpr(&s, 0.2).unwrap(), 0.0);
}

#[test]
fn all_ties() {
    let s = set(&[2.0; 10], &[2.0; 10]);
    assert_eq!(auroc(&s).unwrap(), 0.5);
    assert_eq!(aupr(&s).unwrap(), 0.5);
}

#[test]
fn four_point_example() {
    let s = set(&[1.0, 3.0], &[2.0, 4.0]);
    assert_eq!(auroc(&s).unwrap(), 0.75);
    assert_eq!(auroc_pairs(&s), 0.75);
    assert_eq!(aupr(&s).unwrap(), aupr_sweep(&s));
    // Recall 1/2 at precision 1, recall 1 at precision 2/3.
    assert!((aupr(&s).unwrap() - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn fpr_at_eighty_percent() {
    let id: Vec<f64> = (1..=10).map(f64::from).collect();
    let ood: Vec<f64> = (6..=15).map(f64::from).collect();
    assert!((fpr_at_tpr(&set(&id, &ood), 0.8).unwrap() - 0.3).abs() < 1e-15);
}

#[test]
fn identical_distributions_give_fpr_near_target() {
    let xs: Vec<f64> = (0..1000).map(f64::from).collect();
    let f = fpr_at_tpr(&set(&xs, &xs), 0.95).unwrap();
    assert!((f - 0.95).abs() < 1e-3);
}

#[test]
fn single_class_is_a_metric_error() {
    let s = set(&[1.0, 2.0], &[]);
    assert!(matches!(auroc(&s), Err(Error::Metric(_))));
    assert!(matches!(aupr(&s), Err(Error::Metric(_))));
    assert!(matches!(fpr_at_tpr(&s, 0.95), Err(Error::Metric(_))));
    assert!(matches!(
        ScoredSet::new(vec![1.0], vec![]),
        Err(Error::Metric(_))
    ));
}

#[test]
fn metrics_match_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let s = random_set(&mut rng);
        assert!((auroc(&s).unwrap() - auroc_pairs(&s)).abs() < 1e-12);
        assert!((aupr(&s).unwrap() - aupr_sweep(&s)).abs() < 1e-12);
        for t in [0.5, 0.8, 0.95, 1.0] {
            assert!((fpr_at_tpr(&s, t).unwrap() - fpr_sweep(&s, t)).abs() < 1e-12);
        }
    }
}

#[test]
fn label_flip_and_negation_are_complementary() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let s = random_set(&mut rng);
        let a = auroc(&s).unwrap();
        let flipped =
            ScoredSet::new(s.scores.clone(), s.is_id.iter().map(|b| !b).collect()).unwrap();
        let negated =
            ScoredSet::new(s.scores.iter().map(|v| -v).collect(), s.is_id.clone()).unwrap();
        let both = ScoredSet::new(
            s.scores.iter().map(|v| -v).collect(),
            s.is_id.iter().map(|b| !b).collect(),
        )
        .unwrap();
        assert!((a + auroc(&flipped).unwrap() - 1.0).abs() < 1e-12);
        assert!((a + auroc(&negated).unwrap() - 1.0).abs() < 1e-12);
        assert!((a - auroc(&both).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn report_bundles_metrics() {
    let r = DetectionReport::new("msp", set(&[0.0], &[1.0]), 0.95).unwrap();
    assert_eq!(r.metrics.auroc, 1.0);
    assert_eq!(r.detector, "msp");
}

proptest! {
    #[test]
    fn metrics_are_invariant_to_increasing_maps(
        raw in proptest::collection::vec((0i32..30, any::<bool>()), 2..120),
    ) {
        let mut raw = raw;
        raw[0].1 = true;
        raw[1].1 = false;
        let s = ScoredSet::new(raw.iter().map(|r| f64::from(r.0)).collect(), raw.iter().map(|r| r.1).collect()).unwrap();
        let t = ScoredSet::new(
            s.scores.iter().map(|&x| x * x * x + 2.0 * x - 7.0).collect(),
            s.is_id.clone(),
        ).unwrap();
        prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
        prop_assert_eq!(aupr(&s).unwrap(), aupr(&t).unwrap());
        prop_assert_eq!(fpr_at_tpr(&s, 0.9).unwrap(), fpr_at_tpr(&t, 0.9).unwrap());
    }
}

mod statistics {
    use super::super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Dirichlet, Distribution};

    #[test]
    fn all_positive_diffs_favour_right() {
        let r = bayesian_sign_test(&[0.05; 24], 0.01, 20_000, 1).unwrap();
        assert!(r.p_right > 0.99, "{r:?}");
    }

    #[test]
    fn zero_diffs_favour_rope() {
        let r = bayesian_sign_test(&[0.0; 24], 0.01, 20_000, 1).unwrap();
        assert!(r.p_rope > 0.99, "{r:?}");
    }

    #[test]
    fn matches_an_independent_dirichlet_sampler() {
        let diffs: Vec<f64> = std::iter::repeat_n(-0.1, 4)
            .chain(std::iter::repeat_n(0.0, 2))
            .chain(std::iter::repeat_n(0.1, 18))
            .collect();
        let r = bayesian_sign_test(&diffs, 0.01, 100_000, 5).unwrap();
        // Oracle: the same posterior drawn directly as a Dirichlet with
        // another generator seed.
        let dir = Dirichlet::new([4.0 + 1e-4, 3.0 + 1e-4, 18.0 + 1e-4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12345);
        let n = 100_000;
        let right = (0..n)
            .filter(|_| {
                let p = dir.sample(&mut rng);
                p[2] > p[0] && p[2] > p[1]
            })
            .count() as f64
            / n as f64;
        assert!((r.p_right - right).abs() < 0.02, "{} vs {right}", r.p_right);
    }

    #[test]
    fn sign_test_is_a_deterministic_distribution() {
        let diffs = [0.02, -0.03, 0.0, 0.5, -0.2, 0.011];
        let a = bayesian_sign_test(&diffs, 0.01, 5000, 9).unwrap();
        let b = bayesian_sign_test(&diffs, 0.01, 5000, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.p_left + a.p_rope + a.p_right - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sign_test_rejects_bad_input() {
        assert!(matches!(
            bayesian_sign_test(&[], 0.01, 5000, 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            bayesian_sign_test(&[0.1], -1.0, 5000, 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            bayesian_sign_test(&[0.1], 0.01, 10, 0),
            Err(Error::Argument(_))
        ));
    }

    fn table(cells: Vec<Vec<f64>>, k: usize) -> ComparisonTable {
        ComparisonTable {
            rows: (0..cells.len())
                .map(|i| ("mnist".into(), format!("ood{i}")))
                .collect(),
            detectors: (0..k).map(|d| format!("d{d}")).collect(),
            cells,
        }
    }

    #[test]
    fn critical_distance_for_four_detectors_and_24_rows() {
        let cells = (0..24)
            .map(|i| vec![0.9, 0.8, 0.7 + 0.001 * i as f64, 0.6])
            .collect();
        let (_, cd) = nemenyi_cd(&table(cells, 4), 0.05).unwrap();
        assert!((cd - 0.9576).abs() < 1e-3, "{cd}");
        assert!((cd - 2.569 * (20.0f64 / 144.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dominant_detector_has_rank_one() {
        let cells = (0..10)
            .map(|i| vec![0.5, 0.99, 0.3 + 0.01 * i as f64])
            .collect();
        let (ranks, _) = nemenyi_cd(&table(cells, 3), 0.10).unwrap();
        assert_eq!(ranks[1], 1.0);
    }

    #[test]
    fn identical_columns_share_ranks() {
        let cells = (0..6)
            .map(|i| vec![0.7, 0.6 + 0.05 * i as f64, 0.7])
            .collect();
        let t = table(cells, 3);
        let ranks = t.average_ranks();
        assert_eq!(ranks[0], ranks[2]);
        let total: f64 = ranks.iter().sum();
        assert!((total - 6.0).abs() < 1e-12);
    }

    #[test]
    fn nemenyi_rejects_unsupported_input() {
        let t = table(vec![vec![0.5, 0.6]; 3], 2);
        assert!(matches!(nemenyi_cd(&t, 0.01), Err(Error::Argument(_))));
        let ragged = ComparisonTable {
            cells: vec![vec![0.5, 0.6], vec![0.5]],
            ..table(vec![vec![0.0, 0.0]; 2], 2)
        };
        assert!(matches!(
            nemenyi_cd(&ragged, 0.05),
            Err(Error::Consistency(_))
        ));
    }
}
