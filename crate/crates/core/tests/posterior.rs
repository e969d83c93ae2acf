mod common;

use bam_core::geometry::AtomicStructure;
use bam_core::model::{HeadMode, ModelConfig, ModelParams, RaceModel};
use bam_core::numeric::mat3;
use bam_core::posterior::*;
use common::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn mixture_moments(r: &mut impl Rng, comps: &[(f64, f64)], n: usize) -> (f64, f64) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let (mu, var) = comps[r.random_range(0..comps.len())];
        let z: f64 = r.sample(StandardNormal);
        let x = mu + var.sqrt() * z;
        s1 += x;
        s2 += x * x;
    }
    let m = s1 / n as f64;
    (m, s2 / n as f64 - m * m)
}

#[test]
fn two_member_example() {
    let a = de_aggregate(&[(0.0, 1.0), (2.0, 1.0)]).unwrap();
    assert_eq!((a.mean, a.aleatoric_var, a.epistemic_var, a.total_var), (1.0, 1.0, 1.0, 2.0));
    let (m, v) = mixture_moments(&mut rng(1), &[(0.0, 1.0), (2.0, 1.0)], 1_000_000);
    assert!((m - 1.0).abs() < 0.005 && (v - 2.0).abs() < 0.005 * 2.0);
}

#[test]
fn identical_members_have_no_epistemic_part() {
    let a = de_aggregate(&[(0.7, 0.2); 4]).unwrap();
    assert_eq!(a.epistemic_var, 0.0);
    assert!((a.total_var - 0.2).abs() < 1e-16);
    assert_eq!(de_aggregate(&[]), Err(PosteriorError::NoData));
}

#[test]
fn moment_matching_agrees_with_sampling() {
    let mut r = rng(2);
    for _ in 0..5 {
        let m = r.random_range(2..=5);
        let comps: Vec<(f64, f64)> = (0..m)
            .map(|_| (r.random_range(-2.0..2.0), r.random_range(0.1..2.0)))
            .collect();
        let a = de_aggregate(&comps).unwrap();
        assert!(a.total_var >= a.aleatoric_var && a.total_var >= 0.0);
        let (mc_m, mc_v) = mixture_moments(&mut r, &comps, 1_000_000);
        let sd = a.total_var.sqrt();
        assert!((mc_m - a.mean).abs() < 0.005 * sd.max(a.mean.abs()));
        assert!((mc_v - a.total_var).abs() < 0.005 * a.total_var);
        // the raw second-moment form agrees
        let raw = comps.iter().map(|(u, s)| s + u * u).sum::<f64>() / m as f64 - a.mean * a.mean;
        assert!((raw - a.total_var).abs() < 1e-12);
    }
}

#[test]
fn multivariate_reduces_to_scalar_on_diagonal() {
    let members = vec![
        ([0.3, 1.0, -2.0], [[0.5, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 1.0]]),
        ([1.1, 1.0, -2.0], [[0.7, 0.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.3]]),
        ([-0.4, 1.0, -2.0], [[0.1, 0.0, 0.0], [0.0, 0.3, 0.0], [0.0, 0.0, 0.2]]),
    ];
    let c = de_aggregate_cov(&members).unwrap();
    for k in 0..3 {
        let s = de_aggregate(&members.iter().map(|(m, v)| (m[k], v[k][k])).collect::<Vec<_>>()).unwrap();
        assert!((c.total[k][k] - s.total_var).abs() < 1e-14);
        assert!((c.mean[k] - s.mean).abs() < 1e-15);
    }
    assert_eq!(c.total[0][1], 0.0);
}

#[test]
fn swag_simple_cases() {
    let mut s = SwagState::new(3, 5);
    for _ in 0..4 {
        s.collect(&[1.5, -2.0, 0.0]).unwrap();
    }
    assert_eq!(s.mean, vec![1.5, -2.0, 0.0]);
    assert!(s.diag_var().iter().all(|&v| v == 0.0));
    assert!(s.devs.iter().flatten().all(|&v| v == 0.0));
    assert_eq!(s.sample(&mut rng(0)).unwrap(), s.mean);

    let mut t = SwagState::new(1, 5);
    t.collect(&[0.0]).unwrap();
    assert!(matches!(t.sample(&mut rng(0)), Err(PosteriorError::NotReady(_))));
    t.collect(&[2.0]).unwrap();
    assert_eq!(t.mean, vec![1.0]);
    assert_eq!(t.diag_var(), vec![1.0]);
    assert!(matches!(t.collect(&[1.0, 2.0]), Err(PosteriorError::ShapeError(_))));
}

#[test]
fn swag_buffer_keeps_the_latest_deviations() {
    let mut s = SwagState::new(1, 3);
    for k in 0..6 {
        s.collect(&[k as f64]).unwrap();
    }
    assert_eq!(s.devs.len(), 3);
    // deviation against the mean after including the snapshot
    let means = [0.0, 0.5, 1.0, 1.5, 2.0, 2.5];
    let want: Vec<f64> = (3..6).map(|k| k as f64 - means[k]).collect();
    let got: Vec<f64> = s.devs.iter().map(|d| d[0]).collect();
    assert_eq!(got, want);
}

#[test]
fn swag_statistics_of_gaussian_snapshots() {
    let mut r = rng(3);
    let mut s = SwagState::new(1, 10);
    for _ in 0..1000 {
        let z: f64 = r.sample(StandardNormal);
        s.collect(&[5.0 + 0.3 * z]).unwrap();
    }
    assert!((s.mean[0] - 5.0).abs() < 3.0 * 0.3 / 1000f64.sqrt());
    assert!((s.diag_var()[0] - 0.09).abs() < 0.009);
}

#[test]
fn swag_sampling_law() {
    let mut r = rng(4);
    let d = 5;
    let mut s = SwagState::new(d, 4);
    for _ in 0..7 {
        let th: Vec<f64> = normals(&mut r, d);
        s.collect(&th).unwrap();
    }
    let k = s.devs.len() as f64;
    let diag = s.diag_var();
    let mut want = vec![vec![0.0; d]; d];
    for a in 0..d {
        want[a][a] += 0.5 * diag[a];
        for b in 0..d {
            for dev in &s.devs {
                want[a][b] += dev[a] * dev[b] / (2.0 * (k - 1.0));
            }
        }
    }
    let n = 100_000;
    let mut sum = vec![0.0; d];
    let mut cross = vec![vec![0.0; d]; d];
    for _ in 0..n {
        let x = s.sample(&mut r).unwrap();
        for a in 0..d {
            sum[a] += x[a];
            for b in 0..d {
                cross[a][b] += x[a] * x[b];
            }
        }
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for a in 0..d {
        for b in 0..d {
            let c = cross[a][b] / n as f64 - sum[a] * sum[b] / (n as f64 * n as f64);
            num += (c - want[a][b]).powi(2);
            den += want[a][b].powi(2);
        }
    }
    assert!((num / den).sqrt() < 0.05, "relative error {}", (num / den).sqrt());
    assert_eq!(s.sample(&mut rng(9)).unwrap(), s.sample(&mut rng(9)).unwrap());
}

fn hyper(lr: f64, rho: f64, ess: f64) -> IvonHyper {
    IvonHyper {
        lr,
        beta1: 0.9,
        rho,
        delta: 1e-4,
        ess,
        hess_init: 1.0,
    }
}

#[test]
fn ivon_single_step_oracle() {
    let mut st = IvonState::new(vec![1.0], hyper(0.1, 0.01, 1.0));
    // fixed sample θ = m₀, loss ½θ² so ĝ = θ
    st.step_at(&[1.0], &[1.0]).unwrap();
    let (m0, h0, g0, a, b1, rho, d, lam) = (1.0f64, 1.0f64, 0.0f64, 0.1, 0.9f64, 0.01, 1e-4, 1.0);
    let s2 = 1.0 / (lam * (h0 + d));
    let hhat = 1.0 * (1.0 - m0) / s2;
    assert_eq!(hhat, 0.0);
    let g = b1 * g0 + (1.0 - b1) * 1.0;
    let h = (1.0 - rho) * h0 + rho * hhat + 0.5 * rho * rho * (h0 - hhat) * (h0 - hhat) / (h0 + d);
    let gbar = g / (1.0 - b1.powi(1));
    let m = m0 - a * (gbar + d * m0) / (h + d);
    assert_eq!(st.g[0].to_bits(), g.to_bits());
    assert_eq!(st.h[0].to_bits(), h.to_bits());
    assert_eq!(st.m[0].to_bits(), m.to_bits());
    assert_eq!(st.sigma()[0], 1.0 / (lam * (h + d)).sqrt());
}

#[test]
fn ivon_zero_gradient_shrinks_mean_and_curvature() {
    let mut st = IvonState::new(vec![0.8, -1.5], hyper(0.05, 0.05, 1.0));
    let mut r = rng(5);
    let mut prev_m: Vec<f64> = st.m.iter().map(|v| v.abs()).collect();
    let mut prev_h = st.h.clone();
    for _ in 0..500 {
        st.step(&mut r, |th| vec![0.0; th.len()]).unwrap();
        for k in 0..2 {
            assert!(st.m[k].abs() < prev_m[k]);
            assert!(st.h[k] < prev_h[k]);
        }
        prev_m = st.m.iter().map(|v| v.abs()).collect();
        prev_h = st.h.clone();
    }
}

#[test]
fn ivon_long_run_on_a_quadratic() {
    let mut st = IvonState::new(vec![1.0], hyper(0.1, 0.01, 1e4));
    let mut r = rng(6);
    for _ in 0..5000 {
        st.step(&mut r, |th| th.to_vec()).unwrap();
        let s = st.sigma()[0];
        assert_eq!(s * s, (1.0 / (st.hyper.ess * (st.h[0] + st.hyper.delta)).sqrt()).powi(2));
    }
    assert!(st.m[0].abs() < 1e-2, "m = {}", st.m[0]);
    assert!((st.h[0] - 1.0).abs() < 0.2, "h = {}", st.h[0]);
    let bad = st.step_at(&[0.0], &[f64::NAN]);
    assert!(matches!(bad, Err(PosteriorError::DivergedGradient(_))));
}

#[test]
fn laplace_linear_gaussian_toy() {
    // y = θ x + noise, x = 1, unit noise: J = 1, Λ = 1
    let n = 17;
    let terms: Vec<GgnTerm> = (0..n)
        .map(|_| GgnTerm {
            jac: vec![vec![1.0]],
            blocks: vec![(0, vec![1.0])],
        })
        .collect();
    let st = laplace_fit(vec![0.3], vec![0], &terms, 1.0).unwrap();
    assert_eq!(st.ggn_diag, vec![n as f64]);
    assert_eq!(laplace_fit(vec![0.3], vec![0], &[], 1.0), Err(PosteriorError::NoData));
}

#[test]
fn laplace_diagonal_matches_dense_accumulation() {
    let mut r = rng(7);
    // 2-parameter linear model with 2 outputs per datum and a dense 2×2 noise precision
    let mut terms = Vec::new();
    let mut dense = [[0.0; 2]; 2];
    for _ in 0..30 {
        let j: Vec<Vec<f64>> = (0..2).map(|_| normals(&mut r, 2)).collect();
        let a = normals(&mut r, 4);
        let lam = [
            a[0] * a[0] + a[1] * a[1] + 0.1,
            a[0] * a[2] + a[1] * a[3],
            a[0] * a[2] + a[1] * a[3],
            a[2] * a[2] + a[3] * a[3] + 0.1,
        ];
        for p in 0..2 {
            for q in 0..2 {
                for o1 in 0..2 {
                    for o2 in 0..2 {
                        dense[p][q] += j[o1][p] * lam[o1 * 2 + o2] * j[o2][q];
                    }
                }
            }
        }
        terms.push(GgnTerm {
            jac: j,
            blocks: vec![(0, lam.to_vec())],
        });
    }
    let st = laplace_fit(vec![0.0, 0.0], vec![0, 1], &terms, 0.5).unwrap();
    for p in 0..2 {
        assert!((st.ggn_diag[p] - dense[p][p]).abs() < 1e-10 * dense[p][p].abs().max(1.0));
    }
}

#[test]
fn laplace_prior_controls_spread() {
    let terms = vec![GgnTerm {
        jac: vec![vec![1.0, 0.5]],
        blocks: vec![(0, vec![2.0])],
    }];
    let mut prev = vec![f64::INFINITY; 2];
    for &pp in &[0.1, 1.0, 10.0, 1e3] {
        let st = laplace_fit(vec![1.0, 2.0, 3.0], vec![0, 2], &terms, pp).unwrap();
        let v = st.variances();
        assert!(v[0] < prev[0] && v[1] < prev[1]);
        prev = v;
    }
    let st = laplace_fit(vec![1.0, 2.0, 3.0], vec![0, 2], &terms, 1e16).unwrap();
    let s = st.sample(&mut rng(8));
    assert!(max_abs_diff(&s, &[1.0, 2.0, 3.0]) < 1e-7);
    assert_eq!(s[1], 2.0);
}

fn small_model() -> (RaceModel, ModelParams, AtomicStructure) {
    let m = RaceModel::new(ModelConfig::small(vec![1, 8], HeadMode::Mve8)).unwrap();
    let mut r = rng(10);
    let mut p = m.init_params(&mut r);
    for (v, n) in p.values.iter_mut().zip(normals(&mut r, m.n_params())) {
        *v += 0.2 * n;
    }
    let s = AtomicStructure::molecule(
        vec![[0.0; 3], [1.0, 0.2, 0.0], [-0.3, 1.1, 0.4]],
        vec![8, 1, 1],
    )
    .unwrap();
    (m, p, s)
}

#[test]
fn identical_ensemble_equals_single_model() {
    let (m, p, s) = small_model();
    let single = m.forward(&s, &p).unwrap();
    let post = PosteriorApprox::Ensemble { members: vec![p.clone(); 3] };
    let agg = posterior_predict(&m, &post, &s, 0, &mut rng(0)).unwrap();
    assert_eq!(agg.energy.mean, single.energy_mean);
    assert_eq!(agg.energy.epistemic_var, 0.0);
    assert!((agg.energy.total_var - single.energy_var.unwrap()).abs() < 1e-15);
    let cov = single.force_cov.unwrap();
    for (i, f) in agg.forces.iter().enumerate() {
        assert_eq!(f.mean, single.force_mean[i]);
        assert!(mat3::frob_diff(&f.total, &cov[i]) < 1e-15);
    }
}

#[test]
fn degenerate_swag_gives_identical_samples() {
    let (m, p, s) = small_model();
    let mut st = SwagState::new(p.len(), 3);
    for _ in 0..3 {
        st.collect(&p.values).unwrap();
    }
    let post = PosteriorApprox::Swag { state: st };
    let agg = posterior_predict(&m, &post, &s, 2, &mut rng(1)).unwrap();
    assert_eq!(agg.members[0], agg.members[1]);
    assert_eq!(agg.energy.epistemic_var, 0.0);
    assert!(matches!(
        posterior_predict(&m, &post, &s, 1, &mut rng(1)),
        Err(PosteriorError::NotReady(_))
    ));
}

#[test]
fn aggregation_matches_external_reaggregation() {
    let (m, p, s) = small_model();
    let st = IvonState::new(p.values.clone(), IvonHyper { ess: 50.0, ..IvonHyper::default() });
    let post = PosteriorApprox::Ivon { state: st };
    let agg = posterior_predict(&m, &post, &s, 6, &mut rng(2)).unwrap();
    let pairs: Vec<(f64, f64)> = agg
        .members
        .iter()
        .map(|p| (p.energy_mean, p.energy_var.unwrap()))
        .collect();
    assert_eq!(de_aggregate(&pairs).unwrap(), agg.energy);
    assert!(agg.energy.epistemic_var > 0.0);
    // same rng seed, same prediction
    let again = posterior_predict(&m, &post, &s, 6, &mut rng(2)).unwrap();
    assert_eq!(again, agg);
}
