//! Magnetization trajectories under independent rate-1 spin flips.
//!
//! The magnetization `m ∈ [−1, 1]` of `N` independently flipping spins
//! jumps by `∓2/N` at rates `N(1±m)/2`. Its Hamiltonian is
//!
//! ```text
//! H(m, p) = (1+m)/2 · (e^{−2p} − 1) + (1−m)/2 · (e^{2p} − 1)
//! ```
//!
//! and the Lagrangian is the Legendre transform in `p`, with the closed form
//! (`R = √(q² + 4(1−m²))`)
//!
//! ```text
//! L(m, q) = q/2 · log((q + R) / (2(1−m))) − R/2 + 1.
//! ```
//!
//! Because the spins are independent, every finite-`N` probability of the
//! magnetization at time `T` is an explicit convolution of two binomials;
//! [`mag_exact_log_prob`] evaluates it exactly and serves as the oracle for
//! the action minimizers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use thiserror::Error;

use crate::seeds::derive_seed;
use crate::special::{log_binomial_pmf, log_sum_exp, LogFactorials};
use crate::trajectory::{Curvature, Lagrangian};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MagError {
    #[error("magnetization {0} outside [-1, 1]")]
    OutOfRange(f64),
    #[error("extremal leaves [-1, 1] at t = {t} (value {value})")]
    PathLeavesDomain { t: f64, value: f64 },
    #[error("N(1+m)/2 must be an integer spin count (N = {n}, m = {m})")]
    NotOnLattice { n: u64, m: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// A validated magnetization value.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MagPoint(f64);

impl MagPoint {
    pub fn new(m: f64) -> Result<Self, MagError> {
        if (-1.0..=1.0).contains(&m) {
            Ok(Self(m))
        } else {
            Err(MagError::OutOfRange(m))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn mag_hamiltonian(m: f64, p: f64) -> f64 {
    0.5 * (1.0 + m) * (-2.0 * p).exp_m1() + 0.5 * (1.0 - m) * (2.0 * p).exp_m1()
}

/// `∂H/∂p`.
pub fn mag_hamiltonian_dp(m: f64, p: f64) -> f64 {
    -(1.0 + m) * (-2.0 * p).exp() + (1.0 - m) * (2.0 * p).exp()
}

/// `e^{2p*}` where `p*` attains the Legendre supremum at velocity `q`.
///
/// Each branch avoids the cancellation in `q + R` or `R − q`.
fn optimal_exp2p(m: f64, q: f64) -> f64 {
    let r = (q * q + 4.0 * (1.0 - m * m).max(0.0)).sqrt();
    if q >= 0.0 {
        (q + r) / (2.0 * (1.0 - m))
    } else {
        2.0 * (1.0 + m) / (r - q)
    }
}

/// Momentum `p*(m, q) = ∂L/∂q`.
pub fn mag_optimal_momentum(m: f64, q: f64) -> f64 {
    0.5 * optimal_exp2p(m, q).ln()
}

/// Closed-form Lagrangian; `+∞` for velocities the jump process cannot
/// produce (leaving `[−1, 1]` through its boundary).
pub fn mag_lagrangian(m: f64, q: f64) -> f64 {
    let r = (q * q + 4.0 * (1.0 - m * m).max(0.0)).sqrt();
    if q == 0.0 {
        return 1.0 - 0.5 * r;
    }
    let u = optimal_exp2p(m, q);
    if u == f64::INFINITY || u == 0.0 {
        return f64::INFINITY;
    }
    0.5 * q * u.ln() - 0.5 * r + 1.0
}

/// Right-hand side of Hamilton's equations `(ṁ, ṗ) = (∂H/∂p, −∂H/∂m)`.
pub fn mag_hamilton_rhs(m: f64, p: f64) -> (f64, f64) {
    let (up, down) = ((2.0 * p).exp(), (-2.0 * p).exp());
    (-m * (up + down) + (up - down), 0.5 * (up - down))
}

/// Closed-form extremal `m(t) = C1 e^{2t} + C2 e^{−2t}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagExtremal {
    pub c1: f64,
    pub c2: f64,
    pub horizon: f64,
}

impl MagExtremal {
    pub fn at(&self, t: f64) -> f64 {
        self.c1 * (2.0 * t).exp() + self.c2 * (-2.0 * t).exp()
    }

    pub fn velocity(&self, t: f64) -> f64 {
        2.0 * (self.c1 * (2.0 * t).exp() - self.c2 * (-2.0 * t).exp())
    }
}

fn solve_extremal(m0: f64, mt: f64, horizon: f64) -> MagExtremal {
    // C1 + C2 = m0, C1 e^{2T} + C2 e^{-2T} = mT.
    let c1 = (mt - m0 * (-2.0 * horizon).exp()) / (2.0 * (2.0 * horizon).sinh());
    MagExtremal {
        c1,
        c2: m0 - c1,
        horizon,
    }
}

/// Extremal through `m(0) = m0` and `m(T) = mT`, checked to stay in
/// `[−1, 1]` on a fine grid.
pub fn mag_extremal(m0: f64, mt: f64, horizon: f64) -> Result<MagExtremal, MagError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(MagError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let ext = solve_extremal(m0, mt, horizon);
    let checks = 2000;
    for i in 0..=checks {
        let t = horizon * i as f64 / checks as f64;
        let v = ext.at(t);
        if v.abs() > 1.0 + 1e-12 {
            return Err(MagError::PathLeavesDomain { t, value: v });
        }
    }
    Ok(ext)
}

/// The magnetization Lagrangian as a running cost for the trajectory
/// solvers, with analytic derivatives and closed-form extremals.
#[derive(Debug, Clone, Copy, Default)]
pub struct MagnetizationLagrangian;

impl Lagrangian for MagnetizationLagrangian {
    fn value(&self, x: f64, v: f64) -> f64 {
        mag_lagrangian(x, v)
    }

    fn drift(&self, x: f64) -> f64 {
        -2.0 * x
    }

    fn state_bounds(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn d_velocity(&self, x: f64, v: f64) -> f64 {
        mag_optimal_momentum(x, v)
    }

    fn d_state(&self, x: f64, v: f64) -> f64 {
        let u = optimal_exp2p(x, v);
        0.5 * (u - 1.0 / u)
    }

    fn curvature(&self, x: f64, v: f64) -> Curvature {
        // H_pp = 2R at the optimal momentum.
        let r = (v * v + 4.0 * (1.0 - x * x).max(0.0)).sqrt();
        let u = optimal_exp2p(x, v);
        let cosh2p = 0.5 * (u + 1.0 / u);
        Curvature {
            xx: 2.0 * cosh2p * cosh2p / r,
            xv: cosh2p / r,
            vv: 1.0 / (2.0 * r),
        }
    }

    fn extremal(&self, x0: f64, x1: f64, horizon: f64) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        let ext = mag_extremal(x0, x1, horizon).ok()?;
        Some(Box::new(move |t| ext.at(t)))
    }
}

fn spin_count(n: u64, m: f64) -> Result<u64, MagError> {
    if !(-1.0..=1.0).contains(&m) {
        return Err(MagError::OutOfRange(m));
    }
    let count = n as f64 * (1.0 + m) / 2.0;
    let rounded = count.round();
    if (count - rounded).abs() > 1e-9 * n.max(1) as f64 {
        return Err(MagError::NotOnLattice { n, m });
    }
    Ok(rounded as u64)
}

/// Exact `log P(m_N(T) = mT)` for `N` independent rate-1 spins started
/// deterministically at magnetization `m0`.
///
/// Each spin ends with flipped sign with probability `(1 − e^{−2T})/2`; the
/// final number of `+` spins is `(n₊ − X) + Y` with independent binomials
/// `X ~ Bin(n₊, ·)`, `Y ~ Bin(n₋, ·)`.
pub fn mag_exact_log_prob(n: u64, m0: f64, horizon: f64, mt: f64) -> Result<f64, MagError> {
    if n == 0 {
        return Err(MagError::InvalidInput("N must be positive".into()));
    }
    if !(horizon > 0.0) {
        return Err(MagError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let plus0 = spin_count(n, m0)?;
    let plus_t = spin_count(n, mt)?;
    let minus0 = n - plus0;
    let table = LogFactorials::new(n as usize);
    let ln_flip = (-(-2.0 * horizon).exp_m1() / 2.0).ln();
    let ln_keep = ((1.0 + (-2.0 * horizon).exp()) / 2.0).ln();
    // plus_t = plus0 − x + y, so y = plus_t − plus0 + x.
    let terms: Vec<f64> = (0..=plus0)
        .filter_map(|x| {
            let y = plus_t as i64 - plus0 as i64 + x as i64;
            if y < 0 || y as u64 > minus0 {
                return None;
            }
            Some(
                log_binomial_pmf(&table, plus0, x, ln_flip, ln_keep)
                    + log_binomial_pmf(&table, minus0, y as u64, ln_flip, ln_keep),
            )
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Constrained pressure `p_t(λ·σ_0 | m)` for independent flips started from
/// magnetization `m`:
///
/// ```text
/// (1+m)/2 · log(cosh λ + e^{−2t} sinh λ) + (1−m)/2 · log(cosh λ − e^{−2t} sinh λ)
/// ```
///
/// A spin keeps its sign up to time `t` with probability `(1 + e^{−2t})/2`.
pub fn mag_constrained_pressure(lambda: f64, m: f64, t: f64) -> f64 {
    let decay = (-2.0 * t).exp();
    let (c, s) = (lambda.cosh(), lambda.sinh());
    0.5 * (1.0 + m) * (c + decay * s).ln() + 0.5 * (1.0 - m) * (c - decay * s).ln()
}

/// Monte Carlo estimate of `(1/N) log E[exp(λ Σ_i σ_i(t))]` with its
/// bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureEstimate {
    pub estimate: f64,
    pub bootstrap_se: f64,
}

/// Simulates `replicas` independent copies of `n` rate-1 flipping spins
/// started at magnetization `m` (each spin's flip count is Poisson(t)).
pub fn mag_pressure_monte_carlo(
    lambda: f64,
    m: f64,
    t: f64,
    n: u64,
    replicas: usize,
    bootstrap: usize,
    seed: u64,
) -> Result<PressureEstimate, MagError> {
    let plus = spin_count(n, m)?;
    if replicas < 2 {
        return Err(MagError::InvalidInput("need at least two replicas".into()));
    }
    let poisson = if t > 0.0 {
        Some(Poisson::new(t).map_err(|e| MagError::InvalidInput(e.to_string()))?)
    } else {
        None
    };
    let sums: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let mut total = 0i64;
            for i in 0..n {
                let s0 = if i < plus { 1i64 } else { -1 };
                let flips = poisson.as_ref().map_or(0.0, |p| p.sample(&mut rng));
                total += if (flips as u64) % 2 == 0 { s0 } else { -s0 };
            }
            total as f64
        })
        .collect();
    let scale = 1.0 / n as f64;
    let estimate_of = |idx: &mut dyn Iterator<Item = usize>| -> f64 {
        let exps: Vec<f64> = idx.map(|i| lambda * sums[i]).collect();
        let k = exps.len() as f64;
        scale * (log_sum_exp(&exps) - k.ln())
    };
    let estimate = estimate_of(&mut (0..replicas));
    let boot: Vec<f64> = (0..bootstrap)
        .into_par_iter()
        .map(|b| {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0xB007_5742, b as u64));
            let picks: Vec<usize> = (0..replicas).map(|_| rng.random_range(0..replicas)).collect();
            estimate_of(&mut picks.into_iter())
        })
        .collect();
    let mean = boot.iter().sum::<f64>() / boot.len().max(1) as f64;
    let var = boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boot.len().max(2) - 1) as f64;
    Ok(PressureEstimate {
        estimate,
        bootstrap_se: var.sqrt(),
    })
}

/// One row of the magnetization rate-convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagRateRow {
    pub n: u64,
    pub m0: f64,
    pub horizon: f64,
    pub mt: f64,
    pub exact_rate: f64,
    pub action: f64,
    pub gap: f64,
}

pub const MAG_RATE_CSV_HEADER: &str = "N,m0,T,mT,exact_rate,action,gap";

impl MagRateRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n, self.m0, self.horizon, self.mt, self.exact_rate, self.action, self.gap
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_duality::{conjugate, ConjugateSolver, ScalarFunction};
    use crate::special::central_derivative;

    fn hamiltonian_fn(m: f64) -> ScalarFunction {
        ScalarFunction::new(move |p| mag_hamiltonian(m, p)).with_derivative(move |p| mag_hamiltonian_dp(m, p))
    }

    #[test]
    fn hamiltonian_vanishes_at_zero_momentum() {
        for m in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert_eq!(mag_hamiltonian(m, 0.0), 0.0);
            assert!((mag_hamiltonian_dp(m, 0.0) + 2.0 * m).abs() < 1e-15);
        }
        for p in [-1.5, 0.2, 2.0] {
            assert!((mag_hamiltonian(0.0, p) - ((2.0 * p).cosh() - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn lagrangian_reference_values() {
        let l02 = mag_lagrangian(0.0, 2.0);
        assert!((l02 - 0.467_160_024_646_447_9).abs() < 1e-12);
        assert!((mag_lagrangian(0.5, 0.0) - 0.133_974_596_215_561_4).abs() < 1e-12);
        for m in [-0.9, 0.0, 0.9] {
            assert!(mag_lagrangian(m, -2.0 * m).abs() < 1e-14);
        }
    }

    #[test]
    fn lagrangian_matches_numeric_conjugate() {
        let solver = ConjugateSolver::default();
        for &m in &[-0.95, -0.4, 0.0, 0.6, 0.99] {
            for &q in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
                let c = conjugate(&hamiltonian_fn(m), q, &solver).unwrap();
                assert!((c.value - mag_lagrangian(m, q)).abs() < 1e-9, "m={m} q={q}");
                assert!((c.argmax - mag_optimal_momentum(m, q)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn printed_denominator_fails_zero_cost_check() {
        // With 2(1+m) in the logarithm the drift would not be free.
        let printed = |m: f64, q: f64| {
            let r = (q * q + 4.0 * (1.0 - m * m)).sqrt();
            0.5 * q * ((q + r) / (2.0 * (1.0 + m))).ln() - 0.5 * r + 1.0
        };
        assert!(printed(0.5, -1.0).abs() > 0.1);
        assert!(mag_lagrangian(0.5, -1.0).abs() < 1e-14);
    }

    #[test]
    fn boundary_values() {
        assert_eq!(mag_lagrangian(1.0, 0.5), f64::INFINITY);
        assert_eq!(mag_lagrangian(-1.0, -0.5), f64::INFINITY);
        assert!((mag_lagrangian(1.0, 0.0) - 1.0).abs() < 1e-15);
        // At m = 1 only downward moves exist: L = −(q/2) log(−q/2) + q/2 + 1.
        let q = -0.8f64;
        let expected = -0.5 * q * (-0.5 * q).ln() + 0.5 * q + 1.0;
        assert!((mag_lagrangian(1.0, q) - expected).abs() < 1e-12);
        // Continuity from the interior.
        assert!((mag_lagrangian(1.0 - 1e-9, q) - expected).abs() < 1e-6);
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let l = MagnetizationLagrangian;
        for &(x, v) in &[(0.3, -0.2), (-0.6, 1.1), (0.0, 0.0), (0.85, -2.5)] {
            let h = 1e-6;
            let fv = (mag_lagrangian(x, v + h) - mag_lagrangian(x, v - h)) / (2.0 * h);
            let fx = (mag_lagrangian(x + h, v) - mag_lagrangian(x - h, v)) / (2.0 * h);
            assert!((l.d_velocity(x, v) - fv).abs() < 1e-6);
            assert!((l.d_state(x, v) - fx).abs() < 1e-6);
            let c = l.curvature(x, v);
            let h2 = 1e-4;
            let vv = (l.d_velocity(x, v + h2) - l.d_velocity(x, v - h2)) / (2.0 * h2);
            let xv = (l.d_velocity(x + h2, v) - l.d_velocity(x - h2, v)) / (2.0 * h2);
            let xx = (l.d_state(x + h2, v) - l.d_state(x - h2, v)) / (2.0 * h2);
            assert!((c.vv - vv).abs() < 1e-6 * vv.abs().max(1.0));
            assert!((c.xv - xv).abs() < 1e-6 * xv.abs().max(1.0));
            assert!((c.xx - xx).abs() < 1e-6 * xx.abs().max(1.0));
        }
    }

    #[test]
    fn hamilton_rhs_reference_points() {
        let (dm, dp) = mag_hamilton_rhs(0.4, 0.0);
        assert!((dm + 0.8).abs() < 1e-15 && dp == 0.0);
        let p = 0.3f64;
        let (dm, dp) = mag_hamilton_rhs(0.0, p);
        assert!((dm - 2.0 * (2.0 * p).sinh()).abs() < 1e-14);
        assert!((dp - (2.0 * p).sinh()).abs() < 1e-14);
        // ṁ = ∂H/∂p
        let (dm, _) = mag_hamilton_rhs(0.2, 0.7);
        assert!((dm - mag_hamiltonian_dp(0.2, 0.7)).abs() < 1e-14);
    }

    #[test]
    fn extremal_constants() {
        let t: f64 = 0.8;
        let e = mag_extremal(0.6, 0.6 * (-2.0 * t).exp(), t).unwrap();
        assert!(e.c1.abs() < 1e-15 && (e.c2 - 0.6).abs() < 1e-15);
        let e = mag_extremal(0.7 * (-2.0 * t).exp(), 0.7, t).unwrap();
        assert!(e.c2.abs() < 1e-15 && (e.c1 - 0.7 * (-2.0 * t).exp()).abs() < 1e-15);
        let e = mag_extremal(0.5, 0.0, 1.0).unwrap();
        assert!((e.c1 + 0.009_328_680_181_887_023).abs() < 1e-15);
        assert!((e.c2 - 0.509_328_680_181_887).abs() < 1e-15);
        assert!(matches!(mag_extremal(1.5, 0.0, 1.0), Err(MagError::PathLeavesDomain { .. })));
    }

    #[test]
    fn exact_oracle_small_cases() {
        let t = 0.37;
        let lp = mag_exact_log_prob(2, 1.0, t, 1.0).unwrap();
        assert!((lp - 2.0 * ((1.0 + (-2.0 * t).exp()) / 2.0).ln()).abs() < 1e-14);
        assert!(mag_exact_log_prob(10, 0.2, 1e-9, 0.2).unwrap().abs() < 1e-7);
        // Probabilities over all reachable endpoints sum to one.
        let total: f64 = (0..=10)
            .map(|k| mag_exact_log_prob(10, 0.4, 0.3, -1.0 + 0.2 * k as f64).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(matches!(mag_exact_log_prob(3, 0.5, 1.0, 0.0), Err(MagError::NotOnLattice { .. })));
    }

    #[test]
    fn pressure_limits_and_derivative() {
        for &m in &[-0.9, 0.0, 0.35] {
            for &l in &[-1.2, 0.5, 2.0] {
                assert!((mag_constrained_pressure(l, m, 0.0) - l * m).abs() < 1e-14);
                assert!((mag_constrained_pressure(l, m, 40.0) - f64::cosh(l).ln()).abs() < 1e-12);
                let h = 1e-4;
                let fd = central_derivative(|t| mag_constrained_pressure(l, m, t), 0.0, h);
                assert!((fd - mag_hamiltonian(m, l)).abs() < 1e-6);
            }
        }
    }
}
