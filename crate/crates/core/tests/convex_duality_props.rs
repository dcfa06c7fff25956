use proptest::prelude::*;
use spinflip_ldp::convex_duality::*;
use spinflip_ldp::magnetization::{mag_hamiltonian, mag_lagrangian};
use spinflip_ldp::poisson_walk::{pw_hamiltonian, pw_lagrangian, PoissonWalkParams};

fn family(k: usize) -> ScalarFunction {
    match k % 4 {
        0 => ScalarFunction::new(|p| 0.5 * p * p).with_derivative(|p| p),
        1 => ScalarFunction::new(|p: f64| p.exp() - 1.0).with_derivative(f64::exp),
        2 => ScalarFunction::new(|p: f64| (2.0 * p).cosh() - 1.0).with_derivative(|p: f64| 2.0 * (2.0 * p).sinh()),
        _ => ScalarFunction::new(|p: f64| p.powi(4) + p * p).with_derivative(|p: f64| 4.0 * p.powi(3) + 2.0 * p),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fenchel_inequality(k in 0usize..4, p in -3.0f64..3.0, q in -3.0f64..3.0) {
        // The exponential family has an infinite conjugate for q < 0.
        let q = if k % 4 == 1 { q.abs() + 0.05 } else { q };
        let f = family(k);
        let c = conjugate(&f, q, &ConjugateSolver::default()).unwrap();
        prop_assert!(p * q <= f.eval(p) + c.value + 1e-10);
    }

    #[test]
    fn argmax_is_stationary(k in 0usize..4, q in -3.0f64..3.0) {
        let q = if k % 4 == 1 { q.abs() + 0.05 } else { q };
        let f = family(k);
        let c = conjugate(&f, q, &ConjugateSolver::default()).unwrap();
        prop_assert!((f.derivative(c.argmax).unwrap() - q).abs() <= 1e-8);
    }
}

#[test]
fn double_conjugation_on_compact_interval() {
    let solver = ConjugateSolver::default();
    let f = ScalarFunction::new(|p: f64| p.powi(4) + 0.5 * p).on_interval(-1.5, 1.5);
    let fstar = {
        let f = f.clone();
        ScalarFunction::new(move |q| conjugate(&f, q, &ConjugateSolver::default()).unwrap().value)
    };
    for &x in &[-1.0, -0.4, 0.0, 0.3, 1.1] {
        let back = conjugate(&fstar, x, &solver).unwrap().value;
        assert!((back - f.eval(x)).abs() < 1e-6, "x {x}: {back} vs {}", f.eval(x));
    }
}

#[test]
fn magnetization_pair_is_conjugate_both_ways() {
    let solver = ConjugateSolver::default();
    let states: Vec<f64> = (-9..=9).map(|i| i as f64 * 0.1).collect();
    let slopes: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.2).collect();
    let h = |m: f64| ScalarFunction::new(move |p| mag_hamiltonian(m, p));
    let l = |m: f64| ScalarFunction::new(move |q| mag_lagrangian(m, q));
    assert!(duality_gap(l, h, &states, &slopes, &solver).unwrap() <= 1e-8);
    // Recovering H at |p| = 4 needs velocities near 2e^8.
    let wide = ConjugateSolver { bracket: (-1e4, 1e4), ..ConjugateSolver::default() };
    assert!(duality_gap(h, l, &states, &slopes, &wide).unwrap() <= 1e-8);
}

#[test]
fn poisson_pair_is_conjugate_both_ways() {
    let solver = ConjugateSolver::default();
    let params = PoissonWalkParams::new(2.0, 1.0, 1).unwrap();
    let slopes: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.3).collect();
    let h = move |_: f64| ScalarFunction::new(move |p| pw_hamiltonian(p, &params));
    let l = move |_: f64| ScalarFunction::new(move |a| pw_lagrangian(a, &params));
    assert!(duality_gap(h, l, &[0.0], &slopes, &solver).unwrap() <= 1e-8);
    assert!(duality_gap(l, h, &[0.0], &slopes, &solver).unwrap() <= 1e-8);
}
