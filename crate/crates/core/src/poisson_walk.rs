//! Birth-death walk on `N⁻¹ℤ`: jumps `+1/N` at rate `bN` and `−1/N` at
//! rate `dN`.
//!
//! The walk has Hamiltonian `H(λ) = b(e^λ − 1) + d(e^{−λ} − 1)` (the
//! cumulant generating function of one unit of time) and Lagrangian
//!
//! ```text
//! L(a) = a · log((a + √(a² + 4bd)) / (2b)) − √(a² + 4bd) + b + d,
//! ```
//!
//! so `P(X_N(t) ≈ a t) ≈ exp(−N t L(a))`. The probability of every lattice
//! point is an explicit convolution of two Poisson laws, which
//! [`pw_exact_log_prob`] evaluates without truncation bias.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::seeds::derive_seed;
use crate::special::{log_poisson_pmf, log_sum_exp, LogFactorials};
use crate::trajectory::{Curvature, Lagrangian};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoissonWalkError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonWalkParams {
    b: f64,
    d: f64,
    n: u64,
}

impl PoissonWalkParams {
    pub fn new(b: f64, d: f64, n: u64) -> Result<Self, PoissonWalkError> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(PoissonWalkError::InvalidParams(format!("forward rate b must be > 0, got {b}")));
        }
        if !(d >= 0.0 && d.is_finite()) {
            return Err(PoissonWalkError::InvalidParams(format!("backward rate d must be >= 0, got {d}")));
        }
        if n == 0 {
            return Err(PoissonWalkError::InvalidParams("scale N must be >= 1".into()));
        }
        Ok(Self { b, d, n })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn with_n(self, n: u64) -> Result<Self, PoissonWalkError> {
        Self::new(self.b, self.d, n)
    }
}

pub fn pw_hamiltonian(lambda: f64, params: &PoissonWalkParams) -> f64 {
    params.b * lambda.exp_m1() + params.d * (-lambda).exp_m1()
}

/// `λ*(a)`, the momentum at which `H'(λ) = a`; `None` when no finite
/// momentum attains the supremum.
fn optimal_lambda(a: f64, b: f64, d: f64) -> Option<f64> {
    if d == 0.0 {
        return (a > 0.0).then(|| (a / b).ln());
    }
    let r = (a * a + 4.0 * b * d).sqrt();
    let num = if a >= 0.0 { a + r } else { 4.0 * b * d / (r - a) };
    Some((num / (2.0 * b)).ln())
}

/// Legendre transform of [`pw_hamiltonian`]; `+∞` for negative velocities
/// when there are no backward jumps.
pub fn pw_lagrangian(a: f64, params: &PoissonWalkParams) -> f64 {
    let (b, d) = (params.b, params.d);
    if d == 0.0 {
        return if a > 0.0 {
            a * (a / b).ln() - a + b
        } else if a == 0.0 {
            b
        } else {
            f64::INFINITY
        };
    }
    let r = (a * a + 4.0 * b * d).sqrt();
    let lambda = optimal_lambda(a, b, d).expect("finite for d > 0");
    a * lambda - r + b + d
}

/// The walk's Lagrangian as a running cost (it depends on velocity only).
#[derive(Debug, Clone, Copy)]
pub struct PoissonWalkLagrangian {
    pub params: PoissonWalkParams,
}

impl Lagrangian for PoissonWalkLagrangian {
    fn value(&self, _x: f64, v: f64) -> f64 {
        pw_lagrangian(v, &self.params)
    }

    fn drift(&self, _x: f64) -> f64 {
        self.params.b - self.params.d
    }

    fn d_velocity(&self, _x: f64, v: f64) -> f64 {
        optimal_lambda(v, self.params.b, self.params.d).unwrap_or(f64::NEG_INFINITY)
    }

    fn d_state(&self, _x: f64, _v: f64) -> f64 {
        0.0
    }

    fn curvature(&self, _x: f64, v: f64) -> Curvature {
        let r = (v * v + 4.0 * self.params.b * self.params.d).sqrt();
        Curvature {
            xx: 0.0,
            xv: 0.0,
            vv: 1.0 / r,
        }
    }
}

/// Piecewise-constant path of `X_N`: the value `values[i]` holds on
/// `[times[i], times[i+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub forward_jumps: u64,
    pub backward_jumps: u64,
}

impl PoissonPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("path starts with the origin")
    }
}

/// Exact event-driven simulation on `[0, T]` started at 0.
pub fn pw_simulate(params: &PoissonWalkParams, horizon: f64, seed: u64) -> Result<PoissonPath, PoissonWalkError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(PoissonWalkError::InvalidParams(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n as f64;
    let total = n * (params.b + params.d);
    let p_forward = params.b / (params.b + params.d);
    let mut path = PoissonPath {
        times: vec![0.0],
        values: vec![0.0],
        forward_jumps: 0,
        backward_jumps: 0,
    };
    let mut t = 0.0;
    let mut balance: i64 = 0;
    loop {
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > horizon {
            break;
        }
        if rng.random::<f64>() < p_forward {
            balance += 1;
            path.forward_jumps += 1;
        } else {
            balance -= 1;
            path.backward_jumps += 1;
        }
        path.times.push(t);
        path.values.push(balance as f64 / n);
    }
    Ok(path)
}

/// Terminal values `X_N(T)` of `replicas` independent paths; replica `i`
/// uses seed `derive_seed(master_seed, i)`.
pub fn pw_terminal_values(
    params: &PoissonWalkParams,
    horizon: f64,
    master_seed: u64,
    replicas: usize,
) -> Result<Vec<f64>, PoissonWalkError> {
    (0..replicas)
        .into_par_iter()
        .map(|i| pw_simulate(params, horizon, derive_seed(master_seed, i as u64)).map(|p| p.terminal()))
        .collect()
}

/// Exact `log P(X_N(t) = k/N)`:
///
/// ```text
/// Σ_{j ≥ max(0,k)} Pois(Nbt)(j) · Pois(Ndt)(j − k)
/// ```
///
/// accumulated in log space. Summation stops once the term ratio is below
/// 1/2 (so the remaining tail is bounded by the last term) and the last term
/// is below `1e−17` of the partial sum.
pub fn pw_exact_log_prob(params: &PoissonWalkParams, t: f64, k: i64) -> Result<f64, PoissonWalkError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(PoissonWalkError::InvalidParams(format!("time must be positive, got {t}")));
    }
    let n = params.n as f64;
    let (mean_f, mean_b) = (n * params.b * t, n * params.d * t);
    let start = k.max(0) as u64;
    let table = LogFactorials::new((start as f64 + mean_f + 40.0 * mean_f.sqrt() + 100.0) as usize);
    if mean_b == 0.0 {
        return Ok(if k < 0 { f64::NEG_INFINITY } else { log_poisson_pmf(&table, mean_f, start) });
    }
    let cutoff = (1e-17f64).ln();
    let mut terms = Vec::new();
    let mut running = f64::NEG_INFINITY;
    let mut j = start;
    loop {
        let back = (j as i64 - k) as u64;
        let term = log_poisson_pmf(&table, mean_f, j) + log_poisson_pmf(&table, mean_b, back);
        terms.push(term);
        running = log_sum_exp(&[running, term]);
        let ratio = mean_f * mean_b / ((j + 1) as f64 * (back + 1) as f64);
        if ratio < 0.5 && term - running < cutoff {
            break;
        }
        j += 1;
    }
    Ok(log_sum_exp(&terms))
}

/// One row of the Poisson-walk rate-convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PwRateRow {
    pub n: u64,
    pub t: f64,
    pub a: f64,
    pub empirical_rate: f64,
    pub analytic_rate: f64,
    pub gap: f64,
}

pub const PW_RATE_CSV_HEADER: &str = "N,t,a,empirical_rate,analytic_rate,gap";

impl PwRateRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n, self.t, self.a, self.empirical_rate, self.analytic_rate, self.gap
        )
    }
}

/// `−(1/N) log P(X_N(t) = k/N)` against `t · L(a)` for each `N`, with
/// `k = round(a t N)`.
pub fn pw_rate_convergence(
    params: &PoissonWalkParams,
    ns: &[u64],
    t: f64,
    a: f64,
) -> Result<Vec<PwRateRow>, PoissonWalkError> {
    let analytic = t * pw_lagrangian(a, params);
    ns.iter()
        .map(|&n| {
            let p = params.with_n(n)?;
            let k = (a * t * n as f64).round() as i64;
            let empirical = -pw_exact_log_prob(&p, t, k)? / n as f64;
            Ok(PwRateRow {
                n,
                t,
                a,
                empirical_rate: empirical,
                analytic_rate: analytic,
                gap: (empirical - analytic).abs(),
            })
        })
        .collect()
}

pub fn pw_rate_csv(rows: &[PwRateRow]) -> String {
    let mut out = String::from(PW_RATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex_duality::{conjugate, duality_gap, ConjugateSolver, ScalarFunction};

    fn params(b: f64, d: f64, n: u64) -> PoissonWalkParams {
        PoissonWalkParams::new(b, d, n).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PoissonWalkParams::new(0.0, 1.0, 1).is_err());
        assert!(PoissonWalkParams::new(1.0, -1.0, 1).is_err());
        assert!(PoissonWalkParams::new(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn hamiltonian_values() {
        let p = params(1.0, 1.0, 1);
        assert_eq!(pw_hamiltonian(0.0, &p), 0.0);
        assert!((pw_hamiltonian(1.0, &p) - 1.086_161_269_630_487_4).abs() < 1e-14);
        let q = params(2.3, 0.4, 1);
        let h = 1e-6;
        let slope = (pw_hamiltonian(h, &q) - pw_hamiltonian(-h, &q)) / (2.0 * h);
        assert!((slope - (2.3 - 0.4)).abs() < 1e-8);
    }

    #[test]
    fn lagrangian_reference_values() {
        let p = params(2.0, 1.0, 1);
        assert!(pw_lagrangian(1.0, &p).abs() < 1e-15);
        assert!((pw_lagrangian(0.0, &p) - 0.171_572_875_253_809_7).abs() < 1e-14);
        let pure = params(1.0, 0.0, 1);
        assert!(pw_lagrangian(1.0, &pure).abs() < 1e-15);
        assert_eq!(pw_lagrangian(-0.1, &pure), f64::INFINITY);
        assert_eq!(pw_lagrangian(0.0, &pure), 1.0);
    }

    #[test]
    fn lagrangian_matches_numeric_conjugate() {
        let p = params(2.0, 1.0, 1);
        let h = ScalarFunction::new(move |l| pw_hamiltonian(l, &p))
            .with_derivative(move |l: f64| 2.0 * l.exp() - (-l).exp());
        let c = conjugate(&h, 0.0, &ConjugateSolver::default()).unwrap();
        assert!((c.value - (3.0 - 2.0 * 2f64.sqrt())).abs() < 1e-10);
        let lams: Vec<f64> = (-8..=8).map(|i| i as f64 * 0.25).collect();
        let gap = duality_gap(
            |_| ScalarFunction::new(move |l| pw_hamiltonian(l, &p)),
            |_| ScalarFunction::new(move |a| pw_lagrangian(a, &p)).with_derivative(move |a| optimal_lambda(a, 2.0, 1.0).unwrap()),
            &[0.0],
            &lams,
            &ConjugateSolver::default(),
        )
        .unwrap();
        assert!(gap < 1e-8, "{gap}");
    }

    #[test]
    fn exact_probabilities() {
        let p = params(1.0, 0.0, 1);
        assert!((pw_exact_log_prob(&p, 1.0, 0).unwrap() + 1.0).abs() < 1e-14);
        assert!((pw_exact_log_prob(&p, 1.0, 1).unwrap() + 1.0).abs() < 1e-14);
        assert_eq!(pw_exact_log_prob(&p, 1.0, -1).unwrap(), f64::NEG_INFINITY);
        let q = params(0.7, 1.3, 3);
        let total: f64 = (-60..=60).map(|k| pw_exact_log_prob(&q, 1.5, k).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_monotone_without_backward_jumps() {
        let p = params(1.5, 0.0, 20);
        let a = pw_simulate(&p, 2.0, 11).unwrap();
        let b = pw_simulate(&p, 2.0, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.values.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(a.backward_jumps, 0);
        assert!(a.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rate_table_csv() {
        let p = params(2.0, 1.0, 1);
        let rows = pw_rate_convergence(&p, &[50, 100], 1.0, 1.0).unwrap();
        let csv = pw_rate_csv(&rows);
        assert!(csv.starts_with("N,t,a,empirical_rate,analytic_rate,gap\n50,1,1,"));
        assert!(rows[1].gap < rows[0].gap);
    }
}
