mod common;

use std::sync::Arc;

use common::{brute_lof, quantile_oracle, rel_err, uniform_points, Q};
use lambdapm_core::lof::{
    calibrate_threshold, extract_rule, k_distance, knn, lof, quantile, rule_id, LofParams, LofScorer, ModelSnapshot,
    Query, ReferenceSet, RuleExtractor,
};
use proptest::prelude::*;

fn p(k: usize) -> LofParams {
    LofParams { k, eps: 1e-9 }
}

#[test]
fn k_distance_examples() {
    let set = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]];
    let origin = [0.0, 0.0];
    assert_eq!(k_distance(Query::External(&origin), &set, &p(2)).unwrap(), 2.0);
    let n = knn(Query::External(&origin), &set, &p(2)).unwrap();
    assert_eq!(n.indices().collect::<Vec<_>>(), vec![0, 1]);

    let set = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![2.0, 0.0]];
    let n = knn(Query::External(&origin), &set, &p(1)).unwrap();
    assert_eq!(n.k_distance, 1.0);
    assert_eq!(n.indices().collect::<Vec<_>>(), vec![0, 1]);
}

#[test]
fn too_small_sets_are_errors() {
    let set = vec![vec![0.0], vec![1.0]];
    assert!(knn(Query::External(&[0.5]), &set, &p(3)).is_err());
    assert!(knn(Query::Member(0), &set, &p(2)).is_err());
    assert!(knn(Query::Member(0), &set, &p(1)).is_ok());
}

#[test]
fn knn_matches_full_sort() {
    let mut r = common::rng(11);
    for trial in 0..200 {
        let d = 1 + trial % 4;
        // integer grid coordinates make ties common
        let set: Vec<Vec<f64>> = uniform_points(&mut r, 50, d, 6.0)
            .into_iter()
            .map(|v| v.into_iter().map(f64::floor).collect())
            .collect();
        let k = 1 + trial % 10;
        let i = trial % 50;
        let mut all: Vec<(f64, usize)> = (0..50)
            .filter(|&j| j != i)
            .map(|j| {
                let s: f64 = set[i].iter().zip(&set[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                (s.sqrt().max(1e-9), j)
            })
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let kd = all[k - 1].0;
        let mut want: Vec<usize> = all.iter().filter(|(d, _)| *d <= kd).map(|&(_, j)| j).collect();
        want.sort();
        let got = knn(Query::Member(i), &set, &p(k)).unwrap();
        assert_eq!(got.k_distance, kd);
        assert_eq!(got.indices().collect::<Vec<_>>(), want);
        assert!(got.len() >= k);
    }
}

#[test]
fn unit_square_corners_score_one() {
    let set = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    for i in 0..4 {
        assert_eq!(lof(Query::Member(i), &set, &p(2)).unwrap(), 1.0);
    }
}

#[test]
fn grid_interior_is_flat() {
    let g = common::unit_grid(10);
    let mut scorer = LofScorer::new(&g, p(4)).unwrap();
    for (i, pt) in g.iter().enumerate() {
        let interior = (1.0..=8.0).contains(&pt[0]) && (1.0..=8.0).contains(&pt[1]);
        if interior {
            let s = scorer.score(Query::Member(i)).unwrap();
            assert!((0.9..=1.1).contains(&s), "{pt:?} -> {s}");
        }
    }
}

#[test]
fn duplicates_score_one() {
    let set = vec![vec![3.0, -1.0, 2.0]; 10];
    for i in [0, 4, 9] {
        assert_eq!(lof(Query::Member(i), &set, &p(3)).unwrap(), 1.0);
    }
    assert_eq!(lof(Query::External(&[3.0, -1.0, 2.0]), &set, &p(3)).unwrap(), 1.0);
}

#[test]
fn far_query_against_uniform_square() {
    let mut r = common::rng(5);
    let set = uniform_points(&mut r, 20, 2, 1.0);
    let q = [10.0, 10.0];
    let got = lof(Query::External(&q), &set, &p(3)).unwrap();
    let want = brute_lof(&set, Q::Ext(&q), 3, 1e-9);
    assert!(rel_err(got, want) <= 1e-9, "{got} vs {want}");
    assert!(got > 5.0);
}

#[test]
fn oracle_sweep_small() {
    let (n, worst) = common::lof_oracle_sweep(40, 99);
    assert_eq!(n, 160);
    assert!(worst <= 1e-9, "worst relative error {worst}");
}

fn snapshot(points: Vec<Vec<f64>>, k: usize, capacity: usize, threshold: f64) -> ModelSnapshot {
    let reference = ReferenceSet::from_points(points, capacity).unwrap();
    ModelSnapshot::new(1, p(k), reference, threshold, None).unwrap()
}

#[test]
fn inlier_scores_near_one() {
    let mut r = common::rng(8);
    let pts = uniform_points(&mut r, 300, 2, 1.0);
    let m = snapshot(pts.clone(), 5, 512, 1.5);
    let s = m.score_window(&pts[150]).unwrap();
    assert!((s.score - 1.0).abs() < 0.3, "{}", s.score);
    assert!(!s.is_anomaly);
}

#[test]
fn threshold_is_strict() {
    let mut r = common::rng(9);
    let pts = uniform_points(&mut r, 30, 2, 1.0);
    let q = [4.0, 4.0];
    let score = lof(Query::External(&q), &pts, &p(5)).unwrap();
    let at = snapshot(pts.clone(), 5, 64, score);
    assert!(!at.score_window(&q).unwrap().is_anomaly);
    let below = snapshot(pts, 5, 64, score * (1.0 - 1e-12));
    assert!(below.score_window(&q).unwrap().is_anomaly);
}

#[test]
fn admission_examples() {
    let mut r = common::rng(10);
    let mut m = Arc::new(snapshot(uniform_points(&mut r, 20, 2, 1.0), 3, 100, 1.6));
    assert!((m.admit_below - 1.3).abs() < 1e-12);
    assert!(ModelSnapshot::maybe_admit(&mut m, &[0.5, 0.5], 1.05));
    assert_eq!(m.reference.len(), 21);
    assert!(!ModelSnapshot::maybe_admit(&mut m, &[0.5, 0.5], 2.0));
    assert_eq!(m.reference.len(), 21);

    let mut full = Arc::new(snapshot(uniform_points(&mut r, 100, 2, 1.0), 3, 100, 1.6));
    let second = full.reference.points()[1].clone();
    assert!(ModelSnapshot::maybe_admit(&mut full, &[7.0, 7.0], 1.0));
    assert_eq!(full.reference.len(), 100);
    assert_eq!(full.reference.points()[0], second);
    assert_eq!(full.reference.points()[99], vec![7.0, 7.0]);
}

#[test]
fn calibration_examples() {
    assert_eq!(calibrate_threshold(&[1.0; 100], 0.99, 1.5).unwrap(), 1.5);
    let s: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
    assert_eq!(calibrate_threshold(&s, 0.5, 1.0).unwrap(), 1.0);
    assert!(calibrate_threshold(&[1.0; 19], 0.5, 1.0).is_err());
}

#[test]
fn rule_ids_are_frozen() {
    // values computed independently with Python's hashlib
    assert_eq!(rule_id(&[1.0, 10.0], &[3.0, 12.0], 2.5), "9bd6eabc07b34d7d");
    assert_eq!(rule_id(&[-0.0000001, 0.5], &[1.25, 2.0], 3.0), "869ad2a06825bd5a");
    assert_eq!(rule_id(&[0.1234564, -7.0], &[0.1234566, 7.0], 10.0), "aed0e07762ff373b");
}

#[test]
fn extract_rule_examples() {
    let streak = vec![
        (vec![1.0, 10.0], 3.0),
        (vec![2.0, 12.0], 2.5),
        (vec![3.0, 11.0], 4.0),
    ];
    let rule = extract_rule(&streak, 3, 0.0, 1e-9).unwrap();
    assert_eq!(rule.lower, vec![1.0, 10.0]);
    assert_eq!(rule.upper, vec![3.0, 12.0]);
    assert_eq!(rule.min_score, 2.5);
    assert_eq!(rule.support_count, 3);
    assert_eq!(rule.rule_id, "9bd6eabc07b34d7d");
    assert!(extract_rule(&streak[..2], 3, 0.0, 1e-9).is_none());

    let mut ex = RuleExtractor::new(3, 0.0, 1e-9);
    assert!(ex.observe(&[1.0, 10.0], 3.0, true).is_none());
    assert!(ex.observe(&[2.0, 12.0], 2.5, true).is_none());
    assert!(ex.observe(&[0.0, 0.0], 1.0, false).is_none());
    assert!(ex.observe(&[3.0, 11.0], 4.0, true).is_none());
    assert_eq!(ex.streak_len(), 1);
}

fn rotate(v: &[f64], planes: &[(usize, usize, f64)], shift: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    for &(a, b, t) in planes {
        let (x, y) = (v[a], v[b]);
        v[a] = t.cos() * x - t.sin() * y;
        v[b] = t.sin() * x + t.cos() * y;
    }
    v.iter().zip(shift).map(|(x, s)| x + s).collect()
}

fn point_set(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), 12..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rigid_motion_preserves_lof(
        (set, q) in (2usize..6).prop_flat_map(|d| (point_set(d), prop::collection::vec(-8.0f64..8.0, d))),
        angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 4),
        shift in prop::collection::vec(-100.0f64..100.0, 6),
        k in 1usize..8,
    ) {
        let d = q.len();
        let planes: Vec<(usize, usize, f64)> =
            angles.iter().enumerate().map(|(i, &t)| (i % d, (i + 1) % d, t)).collect();
        let moved: Vec<Vec<f64>> = set.iter().map(|v| rotate(v, &planes, &shift)).collect();
        let mq = rotate(&q, &planes, &shift);
        let a = lof(Query::External(&q), &set, &p(k)).unwrap();
        let b = lof(Query::External(&mq), &moved, &p(k)).unwrap();
        prop_assert!(rel_err(a, b) <= 1e-9, "{} vs {}", a, b);
        let a = lof(Query::Member(0), &set, &p(k)).unwrap();
        let b = lof(Query::Member(0), &moved, &p(k)).unwrap();
        prop_assert!(rel_err(a, b) <= 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn radial_distance_increases_lof(
        seed in any::<u64>(),
        dir in prop::collection::vec(-1.0f64..1.0, 3),
        k in 2usize..8,
    ) {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(norm > 0.1);
        let mut r = common::rng(seed);
        let set: Vec<Vec<f64>> = uniform_points(&mut r, 60, 3, 2.0)
            .into_iter()
            .map(|v| v.into_iter().map(|x| x - 1.0).collect())
            .collect();
        let centroid: Vec<f64> = (0..3).map(|j| set.iter().map(|v| v[j]).sum::<f64>() / 60.0).collect();
        let radius = set
            .iter()
            .map(|v| v.iter().zip(&centroid).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        let scores: Vec<f64> = [2.0, 4.0, 8.0]
            .iter()
            .map(|m| {
                let q: Vec<f64> = centroid.iter().zip(&dir).map(|(c, u)| c + u / norm * m * radius).collect();
                lof(Query::External(&q), &set, &p(k)).unwrap()
            })
            .collect();
        prop_assert!(scores[0] < scores[1] && scores[1] < scores[2], "{:?}", scores);
    }

    #[test]
    fn admission_is_safe(
        seed in any::<u64>(),
        capacity in 6usize..40,
        threshold in 1.0f64..3.0,
        ops in prop::collection::vec((prop::collection::vec(-3.0f64..3.0, 2), 0.5f64..4.0), 1..120),
    ) {
        let mut r = common::rng(seed);
        let init = uniform_points(&mut r, capacity.min(10), 2, 1.0);
        let mut m = Arc::new(snapshot(init.clone(), 3, capacity, threshold));
        let admit_below = m.admit_below;
        prop_assert!(admit_below <= threshold);
        let mut log: Vec<Vec<f64>> = init;
        for (fv, s) in &ops {
            // alternate caller-supplied scores with real ones
            let score = if log.len().is_multiple_of(2) { *s } else { m.score(fv).unwrap() };
            let admitted = ModelSnapshot::maybe_admit(&mut m, fv, score);
            prop_assert_eq!(admitted, score < admit_below);
            if admitted {
                log.push(fv.clone());
            }
            prop_assert!(m.reference.len() <= capacity);
        }
        let tail = &log[log.len().saturating_sub(capacity)..];
        prop_assert_eq!(m.reference.points(), tail);
    }

    #[test]
    fn quantile_matches_oracle(
        values in prop::collection::vec(-1e3f64..1e3, 1..300),
        q in 0.0f64..=1.0,
    ) {
        let got = quantile(&values, q).unwrap();
        let want = quantile_oracle(&values, q);
        prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn rule_bounds_contain_the_streak(
        streak in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 4), 1.0f64..9.0), 3..6),
        margin in 0.0f64..0.5,
    ) {
        let m = streak.len();
        let rule = extract_rule(&streak, m, margin, 1e-9).unwrap();
        for (f, s) in &streak {
            prop_assert!(rule.matches(f, *s));
        }
        prop_assert!(rule.lower.iter().zip(&rule.upper).all(|(l, u)| l <= u));
        prop_assert_eq!(rule.rule_id, rule_id(&rule.lower, &rule.upper, rule.min_score));
    }
}
