use bam_core::autodiff::{value_and_grad, AdError, Tape, Var};
use bam_core::numeric::Scalar;
use num_traits::Float;
use proptest::prelude::*;

fn fd(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += h;
            b[k] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

#[test]
fn square_and_product() {
    let (_, g) = value_and_grad(&[3.0], |x| x[0] * x[0]);
    assert_eq!(g, vec![6.0]);
    let (_, g) = value_and_grad(&[2.0, 5.0], |x| x[0] * x[1]);
    assert_eq!(g, vec![5.0, 2.0]);
}

#[test]
fn error_paths() {
    let tape = Tape::new();
    let x = tape.leaf(1.0);
    let y = x * x;
    assert_eq!(tape.grad(&[y, y], &[x]), Err(AdError::NotScalar(2)));
    assert_eq!(tape.grad(&[], &[x]), Err(AdError::NotScalar(0)));
    assert_eq!(tape.grad(&[y], &[Var::cst(1.0)]), Err(AdError::UnknownLeaf(0)));
    assert_eq!(tape.grad(&[y], &[x, y]), Err(AdError::UnknownLeaf(1)));
    assert_eq!(Tape::try_start(false).err(), Some(AdError::TapeBusy));
    drop(tape);
    let t2 = Tape::new();
    // a variable from the previous recording is not a leaf of this one
    assert!(matches!(t2.grad(&[Var::cst(0.0)], &[x]), Err(AdError::UnknownLeaf(0))));
}

#[test]
fn constants_do_not_touch_the_tape() {
    let a = Var::cst(2.0);
    let b = (a * a).sin() + a.exp();
    assert!(b.is_const());
    assert!((b.value() - (4.0f64.sin() + 2.0f64.exp())).abs() < 1e-15);
}

fn mixed<S: Scalar>(x: &[S]) -> S {
    let (a, b, c) = (x[0], x[1], x[2]);
    let t = a.sin() * b.cos() + (a * b).tanh() - c.exp() / (S::one() + b * b);
    let u = (a * a + c * c + S::cst(0.5)).sqrt().ln() + b.atan2(c) + c.silu();
    let v = S::dot(&[a, b, c], &[c, a, b]) + S::lin_comb(&[0.3, -1.2, 2.0], &[a, b, c]);
    let w = a.softplus() * b.sigmoid() + (c * S::cst(0.7)).powi(3) + a.abs().cbrt();
    t * u + v + w + (a + S::cst(3.0)).powf(b * S::cst(0.2)) + S::sum_of(&[a, b, c]).cosh()
}

proptest! {
    #[test]
    fn reverse_sweep_matches_finite_differences(
        a in 0.2f64..1.5, b in -1.5f64..1.5, c in -1.5f64..1.5
    ) {
        // atan2(b, c) is singular at the origin; finite differences degrade there
        prop_assume!(b.hypot(c) > 0.2);
        let x = [a, b, c];
        let (v, g) = value_and_grad(&x, |v| mixed(v));
        prop_assert!(rel(v, mixed(&x)) < 1e-14);
        let g_fd = fd(|p| mixed(p), &x, 1e-5);
        for k in 0..3 {
            prop_assert!(rel(g[k], g_fd[k]) < 1e-7, "{k}: {} vs {}", g[k], g_fd[k]);
        }
    }

    #[test]
    fn backward_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, k in -3.0f64..3.0) {
        let x = [a.abs() + 0.1, b, c];
        let f1 = |v: &[Var]| v[0].ln() * v[1];
        let f2 = |v: &[Var]| (v[1] * v[2]).sin();
        let (_, g1) = value_and_grad(&x, f1);
        let (_, g2) = value_and_grad(&x, f2);
        let (_, g) = value_and_grad(&x, |v| f1(v) + f2(v) * k);
        for i in 0..3 {
            prop_assert!((g[i] - (g1[i] + k * g2[i])).abs() <= 1e-14 * (1.0 + g[i].abs()));
        }
    }

    #[test]
    fn recorded_backward_gives_hessian_vector_products(
        a in 0.2f64..1.5, b in -1.5f64..1.5, c in -1.5f64..1.5,
        va in -1.0f64..1.0, vb in -1.0f64..1.0, vc in -1.0f64..1.0
    ) {
        prop_assume!(b.hypot(c) > 0.2);
        let x = [a, b, c];
        let dir = [va, vb, vc];
        // d/dx (∇f · v) against finite differences of the first-order gradient
        let hv = {
            let tape = Tape::with_second_order();
            let xs = tape.leaves(&x);
            let y = mixed(&xs);
            let g = tape.grad_graph(&[y], &xs).unwrap();
            // the recorded gradient must agree with the plain sweep
            let g_plain = tape.grad(&[y], &xs).unwrap();
            for k in 0..3 {
                assert!(rel(g[k].value(), g_plain[k]) < 1e-13);
            }
            let s = Var::lin_comb(&dir, &g);
            tape.grad(&[s], &xs).unwrap()
        };
        let gdot = |p: &[f64]| {
            let (_, g) = value_and_grad(p, |v| mixed(v));
            g.iter().zip(&dir).map(|(g, d)| g * d).sum::<f64>()
        };
        let hv_fd = fd(gdot, &x, 1e-5);
        for k in 0..3 {
            prop_assert!(rel(hv[k], hv_fd[k]) < 1e-6, "{k}: {} vs {}", hv[k], hv_fd[k]);
        }
    }
}

#[test]
fn second_order_of_polynomial_is_exact() {
    // f = x³y + y², ∇f = (3x²y, x³ + 2y), ‖∇f‖² differentiated once more
    let tape = Tape::with_second_order();
    let xs = tape.leaves(&[1.5, -0.5]);
    let (x, y) = (xs[0], xs[1]);
    let f = x * x * x * y + y * y;
    let g = tape.grad_graph(&[f], &xs).unwrap();
    let l = g[0] * g[0] + g[1] * g[1];
    let h = tape.grad(&[l], &xs).unwrap();
    let (gx, gy) = (3.0 * 1.5f64.powi(2) * -0.5, 1.5f64.powi(3) - 1.0);
    let (hxx, hxy, hyy) = (6.0 * 1.5 * -0.5, 3.0 * 1.5f64.powi(2), 2.0);
    let want = [2.0 * (gx * hxx + gy * hxy), 2.0 * (gx * hxy + gy * hyy)];
    assert!(rel(h[0], want[0]) < 1e-14 && rel(h[1], want[1]) < 1e-14);
}

#[test]
fn leaves_outside_the_graph_get_zero() {
    let tape = Tape::with_second_order();
    let xs = tape.leaves(&[1.0, 2.0]);
    let f = xs[0].exp();
    assert_eq!(tape.grad(&[f], &xs).unwrap()[1], 0.0);
    let g = tape.grad_graph(&[f], &xs).unwrap();
    assert!(g[1].is_const() && g[1].value() == 0.0);
}
