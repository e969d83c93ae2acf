mod common;

use bam_core::uq::*;
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn grid_residuals(n: usize, sd: f64) -> Vec<f64> {
    (0..n).map(|i| sd * norm_ppf((i as f64 + 0.5) / n as f64)).collect()
}

#[test]
fn levels_are_uniform_interior_grid() {
    let l = levels(4);
    assert_eq!(l, vec![0.2, 0.4, 0.6, 0.8]);
}

#[test]
fn calibrated_grid_has_small_ce() {
    let n = 10_000;
    let sd = vec![0.7; n];
    let r = grid_residuals(n, 0.7);
    let ce = calibration_error(&r, &sd, 100).unwrap();
    assert!(ce < 1e-3, "ce {ce}");
}

#[test]
fn infinite_sd_gives_closed_form_ce() {
    let m = 100;
    let r = vec![0.3, -1.2, 5.0, 0.0];
    let sd = vec![f64::INFINITY; 4];
    let curve = reliability_curve(&r, &sd, m).unwrap();
    assert!(curve.observed.iter().all(|&o| o == 1.0));
    let ce = curve.calibration_error();
    // (1/m) Σ (1 − j/(m+1))²
    let want = (2 * m + 1) as f64 / (6 * (m + 1)) as f64;
    assert!((ce - want).abs() < 1e-12, "{ce} vs {want}");
}

#[test]
fn ce_deterministic() {
    let mut g = rng(3);
    let r = normals(&mut g, 500);
    let sd: Vec<f64> = (0..500).map(|_| g.random_range(0.5..2.0)).collect();
    let a = calibration_error(&r, &sd, 100).unwrap();
    let sd1: Vec<f64> = sd.iter().map(|s| s * 1.0).collect();
    let b = calibration_error(&r, &sd1, 100).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn ce_errors() {
    assert_eq!(calibration_error(&[], &[], 100), Err(UqError::NoData));
    assert!(matches!(
        calibration_error(&[1.0, 2.0], &[1.0], 100),
        Err(UqError::ShapeMismatch(_))
    ));
    assert!(matches!(
        calibration_error(&[1.0, 2.0], &[1.0, 0.0], 100),
        Err(UqError::BadInput(_))
    ));
}

#[test]
fn coverage_matches_direct_count() {
    let mut g = rng(11);
    let n = 300;
    let r = normals(&mut g, n);
    let sd: Vec<f64> = (0..n).map(|_| g.random_range(0.3..3.0)).collect();
    let curve = reliability_curve(&r, &sd, 20).unwrap();
    for (p, o) in curve.levels.iter().zip(&curve.observed) {
        // |z| ≤ Φ⁻¹((1+p)/2)
        let zq = norm_ppf(0.5 * (1.0 + p));
        let count = r.iter().zip(&sd).filter(|(a, s)| (*a / *s).abs() <= zq).count();
        let direct = count as f64 / n as f64;
        assert!((o - direct).abs() <= 1.0 / n as f64 + 1e-12, "p={p}: {o} vs {direct}");
    }
}

proptest! {
    #[test]
    fn ce_invariant_under_common_rescaling(seed in 0u64..1000, k in 0.01f64..100.0) {
        let mut g = rng(seed);
        let r = normals(&mut g, 200);
        let sd: Vec<f64> = (0..200).map(|_| g.random_range(0.2..2.0)).collect();
        // powers of two keep r/σ bit-identical; general k up to rounding at the interval edges
        let k2 = 2f64.powi(k.log2().round() as i32);
        let a = calibration_error(&r, &sd, 100).unwrap();
        let rs: Vec<f64> = r.iter().map(|x| x * k2).collect();
        let ss: Vec<f64> = sd.iter().map(|x| x * k2).collect();
        prop_assert_eq!(a, calibration_error(&rs, &ss, 100).unwrap());
        let rs: Vec<f64> = r.iter().map(|x| x * k).collect();
        let ss: Vec<f64> = sd.iter().map(|x| x * k).collect();
        prop_assert!((a - calibration_error(&rs, &ss, 100).unwrap()).abs() < 1e-4);
    }
}

#[test]
fn auroc_examples() {
    assert_eq!(auroc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
    assert_eq!(auroc(&[3.0, 4.0], &[1.0, 2.0]).unwrap(), 0.0);
    let x = [0.3, 1.0, 1.0, 2.5];
    assert_eq!(auroc(&x, &x).unwrap(), 0.5);
    assert_eq!(auroc(&[], &[1.0]), Err(UqError::NoData));
}

fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut s = 0.0;
    for o in ood {
        for i in id {
            if o > i {
                s += 1.0;
            } else if o == i {
                s += 0.5;
            }
        }
    }
    s / (id.len() * ood.len()) as f64
}

#[test]
fn auroc_random_matches_brute_force() {
    let mut g = rng(5);
    let id = normals(&mut g, 50);
    let ood: Vec<f64> = normals(&mut g, 50).iter().map(|x| x + 0.7).collect();
    assert_eq!(auroc(&id, &ood).unwrap(), brute_auroc(&id, &ood));
}

proptest! {
    #[test]
    fn auroc_matches_brute_force_with_ties(
        id in prop::collection::vec(0i32..6, 1..40),
        ood in prop::collection::vec(0i32..6, 1..40),
    ) {
        let id: Vec<f64> = id.into_iter().map(f64::from).collect();
        let ood: Vec<f64> = ood.into_iter().map(f64::from).collect();
        prop_assert_eq!(auroc(&id, &ood).unwrap(), brute_auroc(&id, &ood));
    }

    #[test]
    fn auroc_invariant_under_monotone_transform(seed in 0u64..1000) {
        let mut g = rng(seed);
        let id = normals(&mut g, 30);
        let ood = normals(&mut g, 25);
        let f = |x: &f64| (2.0 * x).exp() + 3.0;
        let a = auroc(&id, &ood).unwrap();
        let b = auroc(&id.iter().map(f).collect::<Vec<_>>(), &ood.iter().map(f).collect::<Vec<_>>()).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// Isotonic fit by the max–min formula over weighted block averages.
fn isotonic_oracle(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    let avg = |a: usize, b: usize| {
        let sw: f64 = w[a..=b].iter().sum();
        let s: f64 = (a..=b).map(|k| y[k] * w[k]).sum();
        s / sw
    };
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|a| (i..n).map(|b| avg(a, b)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

#[test]
fn pav_small_example() {
    let fit = isotonic_pav(&[1.0, 3.0, 2.0, 4.0], &[1.0; 4]);
    assert_eq!(fit, vec![1.0, 2.5, 2.5, 4.0]);
}

proptest! {
    #[test]
    fn pav_matches_max_min_oracle(
        y in prop::collection::vec(-5.0f64..5.0, 1..25),
        seed in 0u64..100,
    ) {
        let mut g = rng(seed);
        let w: Vec<f64> = (0..y.len()).map(|_| g.random_range(0.5..3.0)).collect();
        let fit = isotonic_pav(&y, &w);
        let want = isotonic_oracle(&y, &w);
        for (a, b) in fit.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn recalibration_knots_monotone(seed in 0u64..500, n in 10usize..200) {
        let mut g = rng(seed);
        let r: Vec<f64> = (0..n).map(|_| g.random_range(-3.0..3.0f64).powi(3)).collect();
        let sd: Vec<f64> = (0..n).map(|_| g.random_range(0.1..2.0)).collect();
        let map = recalibrate_fit(&r, &sd).unwrap();
        prop_assert_eq!(map.knots[0], (0.0, 0.0));
        prop_assert_eq!(*map.knots.last().unwrap(), (1.0, 1.0));
        for w in map.knots.windows(2) {
            prop_assert!(w[0].0 < w[1].0);
            prop_assert!(w[0].1 <= w[1].1);
        }
    }
}

#[test]
fn recalibration_of_calibrated_data_is_near_identity() {
    let mut g = rng(21);
    let n = 10_000;
    let sd: Vec<f64> = (0..n).map(|_| g.random_range(0.5..1.5)).collect();
    let r: Vec<f64> = normals(&mut g, n).iter().zip(&sd).map(|(z, s)| z * s).collect();
    let map = recalibrate_fit(&r, &sd).unwrap();
    for (p, q) in &map.knots {
        assert!((p - q).abs() < 0.02, "knot ({p}, {q})");
    }
}

#[test]
fn recalibration_fixes_overconfidence() {
    let mut g = rng(22);
    let n = 10_000;
    let sd = vec![0.5; n];
    // true sd is twice the predicted one
    let r: Vec<f64> = normals(&mut g, n).iter().map(|z| z * 1.0).collect();
    let before = calibration_error(&r, &sd, 100).unwrap();
    let map = recalibrate_fit(&r, &sd).unwrap();
    let after = recalibrated_calibration_error(&map, &r, &sd, 100).unwrap();
    assert!(after <= 0.1 * before, "before {before}, after {after}");
    // overconfident: nominal 0.25 has more mass below it, so the map pushes it outward
    assert!(recalibrate_apply(&map, 0.25) > 0.25 + 0.05);
    assert!(recalibrate_apply(&map, 0.75) < 0.75 - 0.05);
}

#[test]
fn recalibration_never_increases_ce_on_fit_set() {
    for seed in 0..20 {
        let mut g = rng(100 + seed);
        let n = 400;
        let scale = g.random_range(0.3..3.0);
        let sd: Vec<f64> = (0..n).map(|_| g.random_range(0.5..1.5)).collect();
        let r: Vec<f64> = normals(&mut g, n).iter().zip(&sd).map(|(z, s)| z * s * scale).collect();
        let before = calibration_error(&r, &sd, 100).unwrap();
        let map = recalibrate_fit(&r, &sd).unwrap();
        let after = recalibrated_calibration_error(&map, &r, &sd, 100).unwrap();
        assert!(after <= before + 1e-12, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn recalibration_errors() {
    let r = vec![0.0; 20];
    let sd = vec![1.0; 20];
    assert_eq!(recalibrate_fit(&r, &sd), Err(UqError::DegenerateCalibration));
    assert!(matches!(
        recalibrate_fit(&[0.1, 0.2, 0.3], &[1.0; 3]),
        Err(UqError::TooFewPoints { need: 10, got: 3 })
    ));
}

#[test]
fn apply_examples() {
    let id = CalibrationMap::identity();
    for p in [0.0, 0.13, 0.5, 0.999, 1.0] {
        assert_eq!(recalibrate_apply(&id, p), p);
    }
    let map = CalibrationMap {
        knots: vec![(0.0, 0.0), (0.4, 0.6), (1.0, 1.0)],
    };
    assert_eq!(recalibrate_apply(&map, 0.0), 0.0);
    assert_eq!(recalibrate_apply(&map, 1.0), 1.0);
    // 0.6 + (1.0 − 0.6)(0.7 − 0.4)/0.6 = 0.8
    assert!((recalibrate_apply(&map, 0.7) - 0.8).abs() < 1e-15);
    // 0.6 · 0.2/0.4 = 0.3
    assert!((recalibrate_apply(&map, 0.2) - 0.3).abs() < 1e-15);
}

#[test]
fn score_weights() {
    assert_eq!(SCORE_WEIGHTS, [0.25, 0.25, 0.125, 0.125, 0.25]);
    assert_eq!(SCORE_WEIGHTS.iter().sum::<f64>(), 1.0);
    assert_eq!(EV_TO_KCAL_MOL, 23.06);
}

#[test]
fn score_of_zero_terms_is_zero() {
    let best = MetricRow {
        e_rmse: 0.0,
        f_rmse: 0.0,
        e_ce: 0.01,
        f_ce: 0.001,
        auroc: 1.0,
    };
    let other = MetricRow {
        e_rmse: 0.1,
        f_rmse: 0.2,
        e_ce: 0.05,
        f_ce: 0.004,
        auroc: 0.6,
    };
    let ctx = CohortNormalization::from_cohort(&[best, other]).unwrap();
    assert_eq!(normalized_terms(&best, &ctx), [0.0; 5]);
    assert_eq!(composite_score(&best, &ctx), 0.0);
    // hand arithmetic for the other row
    let want = 0.25 * 0.1 * 23.06 + 0.25 * 0.2 * 23.06 + 0.125 + 0.125 + 0.25 * 0.4;
    assert!((composite_score(&other, &ctx) - want).abs() < 1e-12);
}

#[test]
fn score_cohort_of_one_is_degenerate() {
    let row = MetricRow {
        e_rmse: 0.1,
        f_rmse: 0.1,
        e_ce: 0.1,
        f_ce: 0.1,
        auroc: 0.5,
    };
    assert_eq!(composite_scores(&[row]), Err(UqError::DegenerateNormalization));
}

#[test]
fn score_reproduces_published_ordering() {
    // boron nitride rows; no force CE column, so it is held equal
    let mve = MetricRow {
        e_rmse: 0.21317,
        f_rmse: 0.81957,
        e_ce: 0.02033,
        f_ce: 0.0,
        auroc: 0.50015,
    };
    let de = MetricRow {
        e_rmse: 0.13868,
        f_rmse: 0.67625,
        e_ce: 0.02496,
        f_ce: 0.0,
        auroc: 0.99985,
    };
    let swag = MetricRow {
        e_rmse: 0.26198,
        f_rmse: 0.89750,
        e_ce: 0.05403,
        f_ce: 0.0,
        auroc: 0.95015,
    };
    let s = composite_scores(&[mve, de, swag]).unwrap();
    // published: SWAG 9.37957 > MVE 8.39140 > DE 6.51565
    assert!(s[2] > s[0] && s[0] > s[1], "{s:?}");
}

proptest! {
    #[test]
    fn score_monotone_in_errors(
        base in prop::array::uniform5(0.0f64..1.0),
        bump in 0.0f64..1.0,
        which in 0usize..5,
    ) {
        let ctx = CohortNormalization { e_ce_min: 0.0, e_ce_max: 1.0, f_ce_min: 0.0, f_ce_max: 1.0 };
        let mk = |v: [f64; 5]| MetricRow { e_rmse: v[0], f_rmse: v[1], e_ce: v[2], f_ce: v[3], auroc: v[4] };
        let mut worse = base;
        // for AUROC a worse model has a lower value
        if which == 4 { worse[4] -= bump } else { worse[which] += bump }
        prop_assert!(composite_score(&mk(worse), &ctx) >= composite_score(&mk(base), &ctx));
    }
}

#[test]
fn scatter_zero_error_points_on_axis() {
    let m = vec![1.0, 2.0, 3.0];
    let s = error_scatter(&m, &[0.1, 0.2, 0.3], &m).unwrap();
    assert!(s.points.iter().all(|p| p.1 == 0.0));
    assert_eq!(s.points.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0.1, 0.2, 0.3]);
}

#[test]
fn scatter_bands_are_half_normal_quantiles() {
    let s = error_scatter(&[0.0], &[1.0], &[0.0]).unwrap();
    for q in SCATTER_QUANTILES {
        let want = norm_ppf(0.5 * (1.0 + q));
        assert!((s.band(q, 1.0).unwrap() - want).abs() < 1e-9, "q={q}");
        assert!((s.band(q, 2.5).unwrap() - 2.5 * want).abs() < 1e-8);
    }
    assert!((s.band(0.5, 1.0).unwrap() - 0.6745).abs() < 1e-4);
}

#[test]
fn scatter_calibrated_half_below_median_band() {
    let mut g = rng(31);
    let n = 1000;
    let sd: Vec<f64> = (0..n).map(|_| g.random_range(0.1..1.0)).collect();
    let y: Vec<f64> = normals(&mut g, n).iter().zip(&sd).map(|(z, s)| z * s).collect();
    let s = error_scatter(&vec![0.0; n], &sd, &y).unwrap();
    let below = s.points.iter().filter(|(sd, e)| *e < s.band(0.5, *sd).unwrap()).count();
    let frac = below as f64 / n as f64;
    let tol = 3.0 * (0.25 / n as f64).sqrt();
    assert!((frac - 0.5).abs() < tol, "fraction {frac}");
}

#[test]
fn reports_have_headers() {
    let curve = reliability_curve(&[0.1, -0.2, 0.5], &[1.0; 3], 3).unwrap();
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("level,observed"));
    assert_eq!(text.lines().count(), 4);

    let s = error_scatter(&[0.0, 1.0], &[1.0, 1.0], &[0.5, 0.0]).unwrap();
    let mut buf = Vec::new();
    s.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "sd,abs_error\n1,0.5\n1,1\n");

    let mut buf = Vec::new();
    write_metrics(&mut buf, &[MetricRecord::new("e_rmse", 0.25), MetricRecord::new("auroc", 1.0)]).unwrap();
    let lines: Vec<serde_json::Value> = String::from_utf8(buf)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines[0]["metric"], "e_rmse");
    assert_eq!(lines[1]["value"], 1.0);
}
