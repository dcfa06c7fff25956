use proptest::prelude::*;
use spinflip_ldp::finite_jump::{fj_lagrangian_variational, JumpModel};
use spinflip_ldp::magnetization::*;
use spinflip_ldp::trajectory::{
    euler_lagrange_residual, hamilton_flow_integrate, minimize_action_fixed, ActionSolver, TrajectoryGrid,
};

proptest! {
    #[test]
    fn lagrangian_vanishes_only_on_drift(m in -0.99f64..0.99, q in -5.0f64..5.0) {
        let l = mag_lagrangian(m, q);
        prop_assert!(l >= -1e-14);
        prop_assert!(mag_lagrangian(m, -2.0 * m).abs() <= 1e-10);
        if (q + 2.0 * m).abs() > 1e-3 {
            prop_assert!(l > 0.0);
        }
    }

    #[test]
    fn extremal_solves_euler_lagrange(m0 in -0.8f64..0.8, mt in -0.8f64..0.8, t in 0.5f64..2.0) {
        let ext = mag_extremal(m0, mt, t).unwrap();
        let grid = TrajectoryGrid::sample(t, (t * 20_000.0).ceil() as usize, |s| ext.at(s)).unwrap();
        prop_assert!(euler_lagrange_residual(&MagnetizationLagrangian, &grid) <= 1e-6);
    }
}

#[test]
fn hamilton_flow_conserves_energy() {
    let flow = hamilton_flow_integrate(mag_hamilton_rhs, mag_hamiltonian, (-1.0, 1.0), 0.3, 0.1, 1.0, 1e-4).unwrap();
    assert!(flow.max_energy_drift <= 1e-8);
}

#[test]
fn exact_rate_approaches_minimized_action() {
    let (m0, t, mt) = (0.5, 0.5, 0.0);
    let action = minimize_action_fixed(&MagnetizationLagrangian, m0, mt, t, &ActionSolver::default())
        .unwrap()
        .value;
    let gaps: Vec<f64> = [200u64, 500, 1000]
        .iter()
        .map(|&n| (-mag_exact_log_prob(n, m0, t, mt).unwrap() / n as f64 - action).abs())
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn two_state_jump_model_reproduces_static_cost() {
    let model = JumpModel::spin_flip(0.5).unwrap();
    let v = fj_lagrangian_variational(&model, &[0.0, 0.0]).unwrap();
    assert!((v - mag_lagrangian(0.5, 0.0)).abs() <= 1e-8);
}

#[test]
fn extremal_reference_constants() {
    let ext = mag_extremal(0.5, 0.0, 1.0).unwrap();
    assert!((ext.c1 + 0.009_328_680_181_887_023).abs() < 1e-15);
    assert!((ext.c2 - 0.509_328_680_181_887).abs() < 1e-14);
    assert!(ext.at(1.0).abs() < 1e-15);
}
