mod common;

use bam_core::synthetic::*;
use common::*;
use proptest::prelude::*;

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn morse_well_depth_and_position() {
    let m = Morse::default();
    let (e, de) = m.pair(m.r0);
    assert!((e + m.d).abs() < 1e-15);
    assert_eq!(de, 0.0);
    assert!(m.pair(m.r0 - 0.1).1 < 0.0 && m.pair(m.r0 + 0.1).1 > 0.0);
    assert!(m.pair(50.0).0.abs() < 1e-12);
}

proptest! {
    #[test]
    fn pair_derivative_matches_finite_difference(r in 0.8f64..4.0) {
        let m = Morse { d: 0.7, a: 1.2, r0: 1.7 };
        let h = 1e-6;
        let fd = (m.pair(r + h).0 - m.pair(r - h).0) / (2.0 * h);
        prop_assert!((fd - m.pair(r).1).abs() < 1e-8);
    }

    #[test]
    fn cluster_forces_are_negative_energy_gradient(seed in 0u64..200) {
        let m = Morse::default();
        let mut g = rng(seed);
        let pos: Vec<[f64; 3]> = (0..4)
            .map(|_| {
                let u = unit_vector(&mut g);
                let r = 1.0 + rand::Rng::random_range(&mut g, 0.0..1.5);
                u.map(|x| x * r)
            })
            .collect();
        let (_, f) = m.energy_forces(&pos);
        let h = 1e-6;
        for i in 0..4 {
            for k in 0..3 {
                let mut p = pos.clone();
                p[i][k] += h;
                let ep = m.energy_forces(&p).0;
                p[i][k] -= 2.0 * h;
                let em = m.energy_forces(&p).0;
                prop_assert!((-(ep - em) / (2.0 * h) - f[i][k]).abs() < 1e-6);
            }
        }
        let net: f64 = (0..3).map(|k| f.iter().map(|x| x[k]).sum::<f64>().abs()).sum();
        prop_assert!(net < 1e-12);
    }
}

#[test]
fn dimers_stay_in_range_and_are_labelled() {
    let m = Morse::default();
    let set = morse_dimer_dataset(&m, 300, (1.1, 2.6), &mut rng(1));
    assert_eq!(set.len(), 300);
    for s in &set {
        let r = dist(s.positions[0], s.positions[1]);
        assert!(r > 1.1 - 1e-12 && r < 2.6 + 1e-12);
        assert_eq!(s.species, vec![DIMER_SPECIES; 2]);
        assert!((s.energy.unwrap() - m.pair(r).0).abs() < 1e-12);
        // centered at the origin
        for k in 0..3 {
            assert!((s.positions[0][k] + s.positions[1][k]).abs() < 1e-12);
        }
    }
    let again = morse_dimer_dataset(&m, 300, (1.1, 2.6), &mut rng(1));
    assert_eq!(set, again);
}

fn mean_edge(s: &bam_core::geometry::AtomicStructure) -> f64 {
    let mut sum = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            sum += dist(s.positions[i], s.positions[j]);
        }
    }
    sum / 6.0
}

#[test]
fn two_regimes_are_separated_in_geometry() {
    let m = Morse::default();
    let task = two_regime_task(&m, 20, (30, 10), 15, &mut rng(3));
    assert_eq!((task.train.len(), task.pool.len(), task.test.len()), (20, 40, 15));
    let id_max = task.train.iter().map(mean_edge).fold(0.0, f64::max);
    let ood_min = task.test.iter().map(mean_edge).fold(f64::INFINITY, f64::min);
    assert!(id_max < 1.7 && ood_min > 1.7, "{id_max} {ood_min}");
    let n_ood_pool = task.pool.iter().filter(|s| mean_edge(s) > 1.7).count();
    assert_eq!(n_ood_pool, 10);
    // the pool is shuffled, so the stretched clusters are not all at the end
    assert!(task.pool[..30].iter().any(|s| mean_edge(s) > 1.7));
    assert!(task.pool.iter().all(|s| s.has_labels()));
}
