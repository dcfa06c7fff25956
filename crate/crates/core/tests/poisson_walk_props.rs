use proptest::prelude::*;
use spinflip_ldp::poisson_walk::*;
use spinflip_ldp::trajectory::{action_integral, minimize_action_fixed, ActionSolver, TrajectoryGrid};

proptest! {
    #[test]
    fn lagrangian_nonnegative_with_unique_zero(b in 0.1f64..4.0, d in 0.0f64..4.0, a in -6.0f64..6.0) {
        let p = PoissonWalkParams::new(b, d, 1).unwrap();
        let l = pw_lagrangian(a, &p);
        prop_assert!(l >= -1e-14);
        prop_assert!(pw_lagrangian(b - d, &p).abs() < 1e-12);
        if (a - (b - d)).abs() > 1e-3 {
            prop_assert!(l > 0.0);
        }
    }
}

#[test]
fn action_is_additive_on_linear_paths() {
    let params = PoissonWalkParams::new(2.0, 1.0, 1).unwrap();
    let lag = PoissonWalkLagrangian { params };
    let slope = 0.7;
    let whole = TrajectoryGrid::sample(2.0, 200, |t| slope * t).unwrap();
    let left = TrajectoryGrid::sample(0.6, 60, |t| slope * t).unwrap();
    let right = TrajectoryGrid::sample(1.4, 140, |t| slope * (t + 0.6)).unwrap();
    let total = action_integral(&lag, &whole);
    assert!((total - action_integral(&lag, &left) - action_integral(&lag, &right)).abs() < 1e-12);
    assert!((total - 2.0 * pw_lagrangian(slope, &params)).abs() < 1e-12);
}

#[test]
fn fixed_endpoint_minimizer_is_linear() {
    let params = PoissonWalkParams::new(2.0, 1.0, 1).unwrap();
    let lag = PoissonWalkLagrangian { params };
    let sol = minimize_action_fixed(&lag, 0.0, 2.5, 1.5, &ActionSolver::default()).unwrap();
    let a = 2.5 / 1.5;
    assert!((sol.value - 1.5 * pw_lagrangian(a, &params)).abs() < 1e-9);
    for (i, v) in sol.path.values().iter().enumerate() {
        assert!((v - a * sol.path.dt() * i as f64).abs() < 1e-7);
    }
}

#[test]
fn pure_birth_rejects_decreasing_paths() {
    let params = PoissonWalkParams::new(1.0, 0.0, 1).unwrap();
    assert_eq!(pw_lagrangian(-0.1, &params), f64::INFINITY);
    assert_eq!(pw_lagrangian(0.0, &params), 1.0);
    let lag = PoissonWalkLagrangian { params };
    assert!(minimize_action_fixed(&lag, 0.0, -1.0, 1.0, &ActionSolver::default()).is_err());
}

#[test]
fn empirical_mean_tracks_drift() {
    let params = PoissonWalkParams::new(2.0, 1.0, 200).unwrap();
    let vals = pw_terminal_values(&params, 1.0, 42, 400).unwrap();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    let se = (var / vals.len() as f64).sqrt();
    assert!((mean - 1.0).abs() <= 4.0 * se, "mean {mean} se {se}");
    // Variance of X_N(1) is (b + d) / N.
    assert!((var - 3.0 / 200.0).abs() < 0.25 * 3.0 / 200.0);
}

#[test]
fn rate_gap_shrinks_with_n() {
    let params = PoissonWalkParams::new(2.0, 1.0, 1).unwrap();
    let rows = pw_rate_convergence(&params, &[50, 100, 200, 500], 1.0, 2.0).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].gap < w[0].gap);
    }
}
