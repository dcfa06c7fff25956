//! Numerical property suite.
//!
//! Each check runs one desk-scale experiment against an exact oracle,
//! a closed form or a simulation, and reports a pass flag together with
//! the measured quantities. Results depend only on the configuration, never
//! on the size of the worker pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::badness::{badness_scan, is_bad, BadnessOptions, RateFunctionSpec};
use crate::convex_duality::{duality_gap, ConjugateSolver, ScalarFunction};
use crate::finite_jump::{
    fj_lagrangian_dual, fj_lagrangian_variational, fj_paper_closed_form, random_feasible_instance, JumpModel,
};
use crate::lattice::{
    moment_replicas, nonlinear_generator_exact, nonlinear_generator_general, CoefficientMap, LocalRateSpec,
    SpinConfiguration,
};
use crate::magnetization::{
    mag_constrained_pressure, mag_exact_log_prob, mag_hamilton_rhs, mag_hamiltonian, mag_lagrangian,
    mag_pressure_monte_carlo, MagnetizationLagrangian,
};
use crate::poisson_walk::{pw_rate_convergence, PoissonWalkParams};
use crate::seeds::derive_seed;
use crate::trajectory::{action_integral, hamilton_flow_integrate, minimize_action_fixed, ActionSolver, TrajectoryGrid};

/// Sizes and seeds of the suite. The defaults are the reference settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub drift_samples: usize,
    pub identity_instances: usize,
    pub jump_models: usize,
    pub pressure_replicas: usize,
    pub pressure_bootstrap: usize,
    pub badness_t_points: usize,
    pub bernoulli_grid: usize,
    pub lattice_radius: usize,
    pub lattice_replicas: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 20240607,
            drift_samples: 1000,
            identity_instances: 200,
            jump_models: 100,
            pressure_replicas: 10_000,
            pressure_bootstrap: 400,
            badness_t_points: 40,
            bernoulli_grid: 20,
            lattice_radius: 50,
            lattice_replicas: 50,
        }
    }
}

impl VerifyConfig {
    /// Returns the name of the first field that cannot be used.
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("drift_samples", self.drift_samples),
            ("identity_instances", self.identity_instances),
            ("jump_models", self.jump_models),
            ("pressure_bootstrap", self.pressure_bootstrap),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name}: must be positive"));
            }
        }
        let at_least_two = [
            ("pressure_replicas", self.pressure_replicas),
            ("badness_t_points", self.badness_t_points),
            ("bernoulli_grid", self.bernoulli_grid),
            ("lattice_replicas", self.lattice_replicas),
        ];
        for (name, v) in at_least_two {
            if v < 2 {
                return Err(format!("{name}: must be at least 2"));
            }
        }
        if !(2..=5000).contains(&self.lattice_radius) {
            return Err("lattice_radius: must lie in [2, 5000]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(id: u32, name: &str, passed: bool, detail: String) -> Self {
        Self {
            id,
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn failed(id: u32, name: &str, err: impl std::fmt::Display) -> Self {
        Self::new(id, name, false, format!("error: {err}"))
    }

    pub fn line(&self) -> String {
        format!(
            "{:>2} {:<28} {} {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

pub const VERIFY_CSV_HEADER: &str = "id,name,passed,detail";

pub fn results_csv(results: &[CheckResult]) -> String {
    let mut out = String::from(VERIFY_CSV_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&format!("{},{},{},\"{}\"\n", r.id, r.name, r.passed, r.detail.replace('"', "'")));
    }
    out
}

pub const CHECK_COUNT: u32 = 11;

/// Runs check `id` (1 to [`CHECK_COUNT`]).
pub fn run_check(id: u32, cfg: &VerifyConfig) -> Option<CheckResult> {
    let r = match id {
        1 => conjugate_pair(),
        2 => zero_cost_drift(cfg),
        3 => poisson_walk_ldp(),
        4 => magnetization_ldp(),
        5 => generator_identity(cfg),
        6 => finite_size_scaling(),
        7 => finite_jump_duality(cfg),
        8 => hamilton_flow(),
        9 => constrained_pressure(cfg),
        10 => badness_phase(cfg),
        11 => lattice_lln(cfg),
        _ => return None,
    };
    Some(r)
}

pub fn run_all(cfg: &VerifyConfig) -> Vec<CheckResult> {
    (1..=CHECK_COUNT).filter_map(|id| run_check(id, cfg)).collect()
}

fn tenths(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|i| i as f64 / 10.0).collect()
}

pub fn conjugate_pair() -> CheckResult {
    const NAME: &str = "conjugate_pair";
    let states = tenths(-9, 9);
    let slopes = tenths(-40, 40);
    let h = |m: f64| ScalarFunction::new(move |p| mag_hamiltonian(m, p));
    let l = |m: f64| ScalarFunction::new(move |q| mag_lagrangian(m, q));
    let forward = match duality_gap(l, h, &states, &slopes, &ConjugateSolver::default()) {
        Ok(g) => g,
        Err(e) => return CheckResult::failed(1, NAME, e),
    };
    // Recovering H at |p| = 4 needs velocities of several thousand.
    let wide = ConjugateSolver {
        bracket: (-1e4, 1e4),
        ..ConjugateSolver::default()
    };
    let reverse = match duality_gap(h, l, &states, &slopes, &wide) {
        Ok(g) => g,
        Err(e) => return CheckResult::failed(1, NAME, e),
    };
    CheckResult::new(
        1,
        NAME,
        forward <= 1e-8 && reverse <= 1e-8,
        format!("gap H->L {forward:.3e}, L->H {reverse:.3e}"),
    )
}

pub fn zero_cost_drift(cfg: &VerifyConfig) -> CheckResult {
    const NAME: &str = "zero_cost_drift";
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let worst_l = (0..cfg.drift_samples)
        .map(|_| {
            let m: f64 = rng.random_range(-0.999..0.999);
            mag_lagrangian(m, -2.0 * m).abs()
        })
        .fold(0.0f64, f64::max);
    let mut worst_a = 0.0f64;
    for &(m0, t) in &[(0.5, 1.0), (-0.8, 0.7), (0.95, 2.0)] {
        match TrajectoryGrid::sample(t, 2000, |s| m0 * (-2.0 * s).exp()) {
            Ok(g) => worst_a = worst_a.max(action_integral(&MagnetizationLagrangian, &g).abs()),
            Err(e) => return CheckResult::failed(2, NAME, e),
        }
    }
    CheckResult::new(
        2,
        NAME,
        worst_l <= 1e-10 && worst_a <= 1e-8,
        format!("max |L(m,-2m)| {worst_l:.3e}, max drift action {worst_a:.3e}"),
    )
}

pub fn poisson_walk_ldp() -> CheckResult {
    const NAME: &str = "poisson_walk_ldp";
    let params = match PoissonWalkParams::new(2.0, 1.0, 1) {
        Ok(p) => p,
        Err(e) => return CheckResult::failed(3, NAME, e),
    };
    let mut passed = true;
    let mut parts = Vec::new();
    for a in [0.0, 0.5, 1.0, 2.0] {
        let rows = match pw_rate_convergence(&params, &[50, 500], 1.0, a) {
            Ok(r) => r,
            Err(e) => return CheckResult::failed(3, NAME, e),
        };
        let (g50, g500) = (rows[0].gap, rows[1].gap);
        passed &= g500 <= 0.05 && g500 < g50;
        parts.push(format!("a={a}: {g50:.4} -> {g500:.4}"));
    }
    CheckResult::new(3, NAME, passed, parts.join("; "))
}

pub fn magnetization_ldp() -> CheckResult {
    const NAME: &str = "magnetization_ldp";
    let (n, m0, t, mt) = (2000u64, 0.5, 0.5, 0.0);
    let rate = match mag_exact_log_prob(n, m0, t, mt) {
        Ok(lp) => -lp / n as f64,
        Err(e) => return CheckResult::failed(4, NAME, e),
    };
    let sol = match minimize_action_fixed(&MagnetizationLagrangian, m0, mt, t, &ActionSolver::default()) {
        Ok(s) => s,
        Err(e) => return CheckResult::failed(4, NAME, e),
    };
    let Some(ext) = sol.extremal_value else {
        return CheckResult::failed(4, NAME, "no closed-form extremal");
    };
    let gap = (rate - sol.value).abs();
    let ext_gap = (ext - sol.value).abs();
    CheckResult::new(
        4,
        NAME,
        gap <= 0.05 && ext_gap <= 1e-4,
        format!("exact rate {rate:.6}, action {:.6}, gap {gap:.3e}, extremal gap {ext_gap:.3e}", sol.value),
    )
}

pub fn generator_identity(cfg: &VerifyConfig) -> CheckResult {
    const NAME: &str = "generator_identity";
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 5));
    let mut worst = 0.0f64;
    for i in 0..cfg.identity_instances {
        let (dim, radius) = if i % 2 == 0 { (1, 10) } else { (2, 4) };
        let mut run = || -> Result<f64, crate::lattice::LatticeError> {
            let c = SpinConfiguration::random_product(dim, radius, 0.0, &mut rng)?;
            let rates = LocalRateSpec::random(dim, 1, 0.2, 5.0, &mut rng)?;
            let f = CoefficientMap::random(dim, 3, 3, 2, 1.0, &mut rng);
            let (lhs, rhs) = nonlinear_generator_exact(&c, &f, &rates)?;
            Ok((lhs - rhs).abs())
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => return CheckResult::failed(5, NAME, e),
        }
    }
    CheckResult::new(
        5,
        NAME,
        worst <= 1e-12,
        format!("{} instances, max |lhs-rhs| {worst:.3e}", cfg.identity_instances),
    )
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
}

pub fn finite_size_scaling() -> CheckResult {
    const NAME: &str = "finite_size_scaling";
    let unit = match LocalRateSpec::constant(1, 1.0) {
        Ok(u) => u,
        Err(e) => return CheckResult::failed(6, NAME, e),
    };
    let f = CoefficientMap::basis(vec![(0, 0)], 1.0);
    let mut sides = Vec::new();
    let mut gaps = Vec::new();
    for radius in [5usize, 10, 20] {
        let res = SpinConfiguration::constant(1, radius, 1).and_then(|c| {
            nonlinear_generator_general(
                &c,
                &|x: &[f64]| x[0] * x[0],
                &|x: &[f64]| vec![2.0 * x[0]],
                std::slice::from_ref(&f),
                &unit,
            )
        });
        match res {
            Ok((finite, limit)) => {
                sides.push((2 * radius + 1) as f64);
                gaps.push((finite - limit).abs());
            }
            Err(e) => return CheckResult::failed(6, NAME, e),
        }
    }
    let slope = log_log_slope(&sides, &gaps);
    CheckResult::new(
        6,
        NAME,
        (slope + 1.0).abs() <= 0.2,
        format!("gaps {:.3e} {:.3e} {:.3e}, slope {slope:.4}", gaps[0], gaps[1], gaps[2]),
    )
}

pub fn finite_jump_duality(cfg: &VerifyConfig) -> CheckResult {
    const NAME: &str = "finite_jump_duality";
    let mut worst = 0.0f64;
    for k in 0..cfg.jump_models {
        let n = 2 + k % 5;
        let (model, alpha) = random_feasible_instance(n, derive_seed(cfg.seed ^ 7, k as u64));
        let pair = fj_lagrangian_variational(&model, &alpha).and_then(|v| Ok((v, fj_lagrangian_dual(&model, &alpha)?)));
        match pair {
            Ok((v, d)) => worst = worst.max((v - d.value).abs()),
            Err(e) => return CheckResult::failed(7, NAME, e),
        }
    }
    let counter = JumpModel::spin_flip(0.5).and_then(|m| {
        let v = fj_lagrangian_variational(&m, &[0.0, 0.0])?;
        let p = fj_paper_closed_form(&m, &[0.0, 0.0])?;
        Ok((v, p))
    });
    let (var, closed) = match counter {
        Ok(c) => c,
        Err(e) => return CheckResult::failed(7, NAME, e),
    };
    let mag = (var - mag_lagrangian(0.5, 0.0)).abs();
    CheckResult::new(
        7,
        NAME,
        worst <= 1e-7 && closed - var > 0.009 && mag <= 1e-8,
        format!(
            "{} models, max |var-dual| {worst:.3e}; two-state variational {var:.5} vs closed form {closed:.5}; vs magnetization {mag:.3e}",
            cfg.jump_models
        ),
    )
}

pub fn hamilton_flow() -> CheckResult {
    const NAME: &str = "hamilton_flow";
    let (m0, p0) = (0.3, 0.1);
    let flow = match hamilton_flow_integrate(mag_hamilton_rhs, mag_hamiltonian, (-1.0, 1.0), m0, p0, 1.0, 1e-4) {
        Ok(f) => f,
        Err(e) => return CheckResult::failed(8, NAME, e),
    };
    let growth = flow
        .times
        .iter()
        .zip(&flow.momentum)
        .map(|(t, p)| (p.tanh() - p0.tanh() * (2.0 * t).exp()).abs())
        .fold(0.0f64, f64::max);
    let drift = match hamilton_flow_integrate(mag_hamilton_rhs, mag_hamiltonian, (-1.0, 1.0), m0, 0.0, 1.0, 1e-4) {
        Ok(f) => f
            .times
            .iter()
            .zip(&f.position)
            .map(|(t, m)| (m - m0 * (-2.0 * t).exp()).abs())
            .fold(0.0f64, f64::max),
        Err(e) => return CheckResult::failed(8, NAME, e),
    };
    CheckResult::new(
        8,
        NAME,
        flow.max_energy_drift <= 1e-8 && growth <= 1e-6 && drift <= 1e-8,
        format!(
            "energy drift {:.3e}, tanh growth error {growth:.3e}, zero-momentum error {drift:.3e}",
            flow.max_energy_drift
        ),
    )
}

pub fn constrained_pressure(cfg: &VerifyConfig) -> CheckResult {
    const NAME: &str = "constrained_pressure";
    let h = 1e-4;
    let mut worst = 0.0f64;
    for lambda in tenths(-20, 20) {
        for m in tenths(-9, 9) {
            let p = |t: f64| mag_constrained_pressure(lambda, m, t);
            let fd = (p(-2.0 * h) - 8.0 * p(-h) + 8.0 * p(h) - p(2.0 * h)) / (12.0 * h);
            worst = worst.max((fd - mag_hamiltonian(m, lambda)).abs());
        }
    }
    let mut mc_ok = true;
    let mut parts = Vec::new();
    // Plain log-mean-exp needs λ²·Var(Σσ) of order one; at N = 200 larger
    // tilts sit several standard deviations out in the tail.
    for (k, &(lambda, m)) in [(0.05, 0.3), (-0.1, -0.5)].iter().enumerate() {
        let est = match mag_pressure_monte_carlo(
            lambda,
            m,
            0.5,
            200,
            cfg.pressure_replicas,
            cfg.pressure_bootstrap,
            derive_seed(cfg.seed, 900 + k as u64),
        ) {
            Ok(e) => e,
            Err(e) => return CheckResult::failed(9, NAME, e),
        };
        let exact = mag_constrained_pressure(lambda, m, 0.5);
        let z = (est.estimate - exact).abs() / est.bootstrap_se;
        mc_ok &= z <= 3.0;
        parts.push(format!("lambda={lambda} m={m}: {:.5} vs {exact:.5} ({z:.2} se)", est.estimate));
    }
    CheckResult::new(
        9,
        NAME,
        worst <= 1e-6 && mc_ok,
        format!("max derivative error {worst:.3e}; {}", parts.join("; ")),
    )
}

pub fn badness_phase(cfg: &VerifyConfig) -> CheckResult {
    const NAME: &str = "badness_phase";
    let l = MagnetizationLagrangian;
    let opts = BadnessOptions::default();
    let (well, flat) = match (RateFunctionSpec::double_well(1.5), RateFunctionSpec::bernoulli(0.5)) {
        (Ok(w), Ok(f)) => (w, f),
        (Err(e), _) | (_, Err(e)) => return CheckResult::failed(10, NAME, e),
    };
    let k = cfg.badness_t_points;
    let (lo, hi) = (0.05f64, 3.0f64);
    let ts: Vec<f64> = (0..k)
        .map(|i| {
            if i + 1 == k {
                hi
            } else {
                (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (k - 1) as f64).exp()
            }
        })
        .collect();
    let column = badness_scan(&l, &well, &ts, &[0.0], &opts, derive_seed(cfg.seed, 10));
    let mut flags = Vec::with_capacity(k);
    for c in &column.cells {
        match &c.outcome {
            Ok(o) => flags.push(o.bad),
            Err(e) => return CheckResult::failed(10, NAME, e),
        }
    }
    let switches = flags.windows(2).filter(|w| w[0] != w[1]).count();
    let crossover = flags.iter().position(|&b| b).map(|i| ts[i]);
    let column_ok = !flags[0] && flags[k - 1] && switches == 1;

    let branches = match is_bad(&l, &well, 0.0, 3.0, &opts) {
        Ok(d) => d,
        Err(e) => return CheckResult::failed(10, NAME, e),
    };
    let opposite = matches!((branches.upper_limit, branches.lower_limit), (Some(u), Some(d)) if u > 0.0 && d < 0.0);

    let g = cfg.bernoulli_grid;
    let scan_ts: Vec<f64> = (0..g)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (g - 1) as f64).exp())
        .collect();
    let scan_ms: Vec<f64> = (0..g).map(|i| -0.9 + 1.8 * i as f64 / (g - 1) as f64).collect();
    let scan = badness_scan(&l, &flat, &scan_ts, &scan_ms, &opts, derive_seed(cfg.seed, 11));
    let errors = scan.cells.iter().filter(|c| c.outcome.is_err()).count();
    let bad = scan.bad_count();

    CheckResult::new(
        10,
        NAME,
        column_ok && opposite && bad == 0 && errors == 0,
        format!(
            "double well: first bad T {}, {switches} switch(es); branch limits {:?}/{:?}; bernoulli scan {} cells, {bad} bad, {errors} errors",
            crossover.map_or("none".to_string(), |t| format!("{t:.4}")),
            branches.upper_limit,
            branches.lower_limit,
            scan.cells.len()
        ),
    )
}

pub fn lattice_lln(cfg: &VerifyConfig) -> CheckResult {
    const NAME: &str = "lattice_lln";
    let times = [0.1, 0.5, 1.0];
    let obs = [
        CoefficientMap::basis(vec![(0, 0)], 1.0),
        CoefficientMap::basis(vec![(0, 0), (1, 0)], 1.0),
    ];
    let rows = SpinConfiguration::constant(1, cfg.lattice_radius, 1)
        .and_then(|c| LocalRateSpec::constant(1, 1.0).map(|u| (c, u)))
        .and_then(|(c, u)| moment_replicas(&c, &u, &times, &obs, cfg.lattice_replicas, derive_seed(cfg.seed, 11)));
    let rows = match rows {
        Ok(r) => r,
        Err(e) => return CheckResult::failed(11, NAME, e),
    };
    let mut worst_z = 0.0f64;
    for (ti, t) in times.iter().enumerate() {
        for (oi, size) in [1.0f64, 2.0].iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[ti * obs.len() + oi]).collect();
            let k = col.len() as f64;
            let mean = col.iter().sum::<f64>() / k;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
            let z = (mean - (-2.0 * size * t).exp()).abs() / (sd / k.sqrt());
            worst_z = worst_z.max(z);
        }
    }
    CheckResult::new(
        11,
        NAME,
        worst_z <= 3.0,
        format!(
            "side {}, {} replicas, worst deviation {worst_z:.2} se",
            2 * cfg.lattice_radius + 1,
            cfg.lattice_replicas
        ),
    )
}
