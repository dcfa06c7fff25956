//! Discretized action functionals and optimal trajectories.
//!
//! A trajectory is a uniformly sampled path `γ_0, …, γ_n` on `[0, T]`. The
//! discrete action uses one term per interval, with the velocity taken as the
//! forward difference and the state at the interval midpoint:
//!
//! ```text
//! S(γ) = Σ_i Δt · L((γ_i + γ_{i+1}) / 2, (γ_{i+1} − γ_i) / Δt)
//! ```
//!
//! Each term only touches two neighbouring nodes, so the action is additive
//! over sub-intervals and its Hessian is tridiagonal. The minimizers below
//! run damped Newton iterations on that tridiagonal system with a
//! backtracking line search that rejects infeasible (infinite-cost) steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("no candidate path has finite action")]
    NoFeasiblePath,
    #[error("state left the admissible interval at t = {t} (value {value})")]
    DomainExit { t: f64, value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Second derivatives of a Lagrangian at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Curvature {
    pub xx: f64,
    pub xv: f64,
    pub vv: f64,
}

/// A running cost `L(x, v)` on a scalar state.
///
/// Derivatives default to central differences; models with closed forms
/// override them.
pub trait Lagrangian: Send + Sync {
    /// May return `+∞` for infeasible velocities.
    fn value(&self, x: f64, v: f64) -> f64;

    /// Zero-cost velocity at state `x`.
    fn drift(&self, x: f64) -> f64;

    fn state_bounds(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn d_velocity(&self, x: f64, v: f64) -> f64 {
        let h = 1e-6 * v.abs().max(1.0);
        (self.value(x, v + h) - self.value(x, v - h)) / (2.0 * h)
    }

    fn d_state(&self, x: f64, v: f64) -> f64 {
        let (lo, hi) = self.state_bounds();
        let h = 1e-6 * x.abs().max(1.0);
        let a = (x - h).max(lo);
        let b = (x + h).min(hi);
        (self.value(b, v) - self.value(a, v)) / (b - a)
    }

    fn curvature(&self, x: f64, v: f64) -> Curvature {
        let (lo, hi) = self.state_bounds();
        let hv = 1e-4 * v.abs().max(1.0);
        let hx = 1e-4 * x.abs().max(1.0);
        let xa = (x - hx).max(lo);
        let xb = (x + hx).min(hi);
        let vv = (self.d_velocity(x, v + hv) - self.d_velocity(x, v - hv)) / (2.0 * hv);
        let xv = (self.d_velocity(xb, v) - self.d_velocity(xa, v)) / (xb - xa);
        let xx = (self.d_state(xb, v) - self.d_state(xa, v)) / (xb - xa);
        Curvature { xx, xv, vv }
    }

    /// Closed-form solution of the Euler-Lagrange equation joining `x0` at
    /// time 0 to `x1` at time `horizon`, when the model has one.
    fn extremal(&self, _x0: f64, _x1: f64, _horizon: f64) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        None
    }
}

impl<L: Lagrangian + ?Sized> Lagrangian for &L {
    fn value(&self, x: f64, v: f64) -> f64 {
        (**self).value(x, v)
    }
    fn drift(&self, x: f64) -> f64 {
        (**self).drift(x)
    }
    fn state_bounds(&self) -> (f64, f64) {
        (**self).state_bounds()
    }
    fn d_velocity(&self, x: f64, v: f64) -> f64 {
        (**self).d_velocity(x, v)
    }
    fn d_state(&self, x: f64, v: f64) -> f64 {
        (**self).d_state(x, v)
    }
    fn curvature(&self, x: f64, v: f64) -> Curvature {
        (**self).curvature(x, v)
    }
    fn extremal(&self, x0: f64, x1: f64, horizon: f64) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
        (**self).extremal(x0, x1, horizon)
    }
}

/// A static cost on the starting point, e.g. the rate function of the
/// initial distribution.
pub trait InitialCost: Send + Sync {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    /// Interval on which the cost is finite.
    fn support(&self) -> (f64, f64);
}

/// Uniformly time-sampled path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryGrid {
    horizon: f64,
    values: Vec<f64>,
}

impl TrajectoryGrid {
    pub fn new(horizon: f64, values: Vec<f64>) -> Result<Self, TrajectoryError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(TrajectoryError::InvalidInput(format!("horizon must be positive, got {horizon}")));
        }
        if values.len() < 2 {
            return Err(TrajectoryError::InvalidInput("a trajectory needs at least two nodes".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(TrajectoryError::InvalidInput("trajectory values must be finite".into()));
        }
        Ok(Self { horizon, values })
    }

    /// Samples `path` at `steps + 1` equally spaced times.
    pub fn sample(horizon: f64, steps: usize, path: impl Fn(f64) -> f64) -> Result<Self, TrajectoryError> {
        let steps = steps.max(1);
        let dt = horizon / steps as f64;
        Self::new(horizon, (0..=steps).map(|i| path(dt * i as f64)).collect())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let dt = self.dt();
        (0..self.values.len()).map(move |i| dt * i as f64)
    }

    pub fn start(&self) -> f64 {
        self.values[0]
    }

    pub fn end(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `t,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,value\n");
        for (t, v) in self.times().zip(&self.values) {
            out.push_str(&format!("{t},{v}\n"));
        }
        out
    }

    fn within(&self, bounds: (f64, f64)) -> bool {
        self.values.iter().all(|&v| v >= bounds.0 && v <= bounds.1)
    }
}

fn interval_term<L: Lagrangian + ?Sized>(l: &L, a: f64, b: f64, dt: f64) -> f64 {
    dt * l.value(0.5 * (a + b), (b - a) / dt)
}

fn discrete_action<L: Lagrangian + ?Sized>(l: &L, values: &[f64], dt: f64) -> f64 {
    let mut total = 0.0;
    for w in values.windows(2) {
        let term = interval_term(l, w[0], w[1], dt);
        if !term.is_finite() {
            return f64::INFINITY;
        }
        total += term;
    }
    total
}

/// Composite action of `traj`; `+∞` as soon as any interval is infeasible.
pub fn action_integral<L: Lagrangian + ?Sized>(lagrangian: &L, traj: &TrajectoryGrid) -> f64 {
    discrete_action(lagrangian, &traj.values, traj.dt())
}

/// Largest Euler-Lagrange residual `|d/dt ∂L/∂v − ∂L/∂x|` over interior
/// nodes.
///
/// The momentum `∂L/∂v` is evaluated on interval midpoints, so the residual
/// is second-order accurate for smooth paths and vanishes (up to solver
/// tolerance) on minimizers of the discrete action.
pub fn euler_lagrange_residual<L: Lagrangian + ?Sized>(lagrangian: &L, traj: &TrajectoryGrid) -> f64 {
    let dt = traj.dt();
    let vals = &traj.values;
    let mids: Vec<(f64, f64)> = vals
        .windows(2)
        .map(|w| (0.5 * (w[0] + w[1]), (w[1] - w[0]) / dt))
        .collect();
    let momenta: Vec<f64> = mids.iter().map(|&(x, v)| lagrangian.d_velocity(x, v)).collect();
    let forces: Vec<f64> = mids.iter().map(|&(x, v)| lagrangian.d_state(x, v)).collect();
    let mut worst: f64 = 0.0;
    for i in 1..mids.len() {
        let r = (momenta[i] - momenta[i - 1]) / dt - 0.5 * (forces[i] + forces[i - 1]);
        worst = worst.max(r.abs());
    }
    worst
}

/// Momentum `∂L/∂v` at `t = 0`, extrapolated from the first interval.
pub fn initial_momentum<L: Lagrangian + ?Sized>(lagrangian: &L, traj: &TrajectoryGrid) -> f64 {
    let dt = traj.dt();
    let (a, b) = (traj.values[0], traj.values[1]);
    let (x, v) = (0.5 * (a + b), (b - a) / dt);
    lagrangian.d_velocity(x, v) - 0.5 * dt * lagrangian.d_state(x, v)
}

/// Options for the fixed-endpoint minimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSolver {
    pub steps: usize,
    pub max_newton_iters: usize,
    /// Convergence threshold on the largest Newton step.
    pub step_tol: f64,
    /// Also start from linear, drift-then-jump and jump-then-drift profiles.
    pub heuristic_starts: bool,
    /// Additional randomly perturbed starts.
    pub jitter_starts: usize,
    pub seed: u64,
}

impl Default for ActionSolver {
    fn default() -> Self {
        Self {
            steps: 400,
            max_newton_iters: 60,
            step_tol: 1e-12,
            heuristic_starts: true,
            jitter_starts: 2,
            seed: 0x5eed,
        }
    }
}

/// Result of [`minimize_action_fixed`].
#[derive(Debug, Clone)]
pub struct FixedSolution {
    pub path: TrajectoryGrid,
    pub value: f64,
    /// Action of the discretized closed-form extremal, when available.
    pub extremal_value: Option<f64>,
    /// Polished value reached from every feasible start, in start order.
    pub restart_values: Vec<f64>,
}

fn clamp_into(v: f64, bounds: (f64, f64)) -> f64 {
    v.max(bounds.0).min(bounds.1)
}

fn starting_paths<L: Lagrangian + ?Sized>(
    l: &L,
    x0: f64,
    x1: f64,
    horizon: f64,
    opts: &ActionSolver,
) -> Vec<Vec<f64>> {
    let n = opts.steps.max(2);
    let dt = horizon / n as f64;
    let bounds = l.state_bounds();
    let mut starts = Vec::new();
    if let Some(path) = l.extremal(x0, x1, horizon) {
        starts.push((0..=n).map(|i| clamp_into(path(dt * i as f64), bounds)).collect());
    }
    let linear: Vec<f64> = (0..=n).map(|i| x0 + (x1 - x0) * i as f64 / n as f64).collect();
    if !opts.heuristic_starts && !starts.is_empty() {
        return starts;
    }
    starts.push(linear.clone());
    if opts.heuristic_starts {
        let knee = (n / 10).max(1);
        // Follow the drift, then jump to the endpoint over the last tenth.
        let mut forward = vec![x0; n + 1];
        for i in 0..n - knee {
            forward[i + 1] = clamp_into(forward[i] + dt * l.drift(forward[i]), bounds);
        }
        let from = forward[n - knee];
        for j in 1..=knee {
            forward[n - knee + j] = from + (x1 - from) * j as f64 / knee as f64;
        }
        starts.push(forward);
        // Jump first, then ride the drift into the endpoint.
        let mut backward = vec![x1; n + 1];
        for i in (knee..n).rev() {
            backward[i] = clamp_into(backward[i + 1] - dt * l.drift(backward[i + 1]), bounds);
        }
        let to = backward[knee];
        for j in 0..=knee {
            backward[j] = x0 + (to - x0) * j as f64 / knee as f64;
        }
        starts.push(backward);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let span = (x1 - x0).abs().max(0.1);
    for _ in 0..opts.jitter_starts {
        let modes = rng.random_range(1..=3) as f64;
        let amp = rng.random_range(-0.25..0.25) * span;
        starts.push(
            linear
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let s = i as f64 / n as f64;
                    clamp_into(v + amp * (std::f64::consts::PI * modes * s).sin(), bounds)
                })
                .collect(),
        );
    }
    starts
}

/// Gradient and tridiagonal Hessian of the discrete action with respect to
/// the nodes flagged free. Fixed nodes get identity rows and zero gradient.
fn gradient_and_hessian<L: Lagrangian + ?Sized>(
    l: &L,
    vals: &[f64],
    dt: f64,
    free: &[bool],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = vals.len();
    let mut grad = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m - 1];
    for i in 0..m - 1 {
        let (a, b) = (vals[i], vals[i + 1]);
        let (x, v) = (0.5 * (a + b), (b - a) / dt);
        let lx = l.d_state(x, v);
        let lv = l.d_velocity(x, v);
        let c = l.curvature(x, v);
        grad[i] += 0.5 * dt * lx - lv;
        grad[i + 1] += 0.5 * dt * lx + lv;
        diag[i] += 0.25 * dt * c.xx - c.xv + c.vv / dt;
        diag[i + 1] += 0.25 * dt * c.xx + c.xv + c.vv / dt;
        off[i] += 0.25 * dt * c.xx - c.vv / dt;
    }
    for i in 0..m {
        if !free[i] {
            grad[i] = 0.0;
            diag[i] = 1.0;
            if i > 0 {
                off[i - 1] = 0.0;
            }
            if i < m - 1 {
                off[i] = 0.0;
            }
        }
    }
    (grad, diag, off)
}

/// Solves the symmetric tridiagonal system `(T + shift·I) x = rhs`; `None`
/// if a pivot is not positive.
fn solve_tridiagonal(diag: &[f64], off: &[f64], shift: f64, rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0] + shift;
    if !(piv > 0.0) {
        return None;
    }
    c[0] = if n > 1 { off[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] + shift - off[i - 1] * c[i - 1];
        if !(piv > 0.0) || !piv.is_finite() {
            return None;
        }
        if i < n - 1 {
            c[i] = off[i] / piv;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Some(x)
}

/// Damped Newton descent on the free nodes. Returns the polished path and
/// its action.
fn newton_descent<L: Lagrangian + ?Sized>(
    l: &L,
    mut vals: Vec<f64>,
    dt: f64,
    free: &[bool],
    opts: &ActionSolver,
) -> (Vec<f64>, f64) {
    let bounds = l.state_bounds();
    let mut value = discrete_action(l, &vals, dt);
    if !value.is_finite() {
        return (vals, value);
    }
    for _ in 0..opts.max_newton_iters {
        let (grad, diag, off) = gradient_and_hessian(l, &vals, dt, free);
        if grad.iter().any(|g| !g.is_finite()) {
            break;
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let scale = diag.iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1e-300);
        let mut shift = 0.0;
        let mut step = None;
        for _ in 0..40 {
            if let Some(s) = solve_tridiagonal(&diag, &off, shift, &neg) {
                step = Some(s);
                break;
            }
            shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
        }
        let Some(step) = step else { break };
        let max_step = step.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        if max_step < opts.step_tol {
            break;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = vals.iter().zip(&step).map(|(v, s)| v + t * s).collect();
            if trial.iter().all(|&v| v >= bounds.0 && v <= bounds.1) {
                let tv = discrete_action(l, &trial, dt);
                if tv.is_finite() && tv <= value {
                    vals = trial;
                    value = tv;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted || max_step * t < opts.step_tol {
            break;
        }
    }
    (vals, value)
}

/// Minimizes the discrete action over interior nodes with both endpoints
/// pinned.
pub fn minimize_action_fixed<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    start: f64,
    end: f64,
    horizon: f64,
    opts: &ActionSolver,
) -> Result<FixedSolution, TrajectoryError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(TrajectoryError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    let bounds = lagrangian.state_bounds();
    for x in [start, end] {
        if !(x >= bounds.0 && x <= bounds.1) {
            return Err(TrajectoryError::InvalidInput(format!("endpoint {x} outside the state interval")));
        }
    }
    let n = opts.steps.max(2);
    let dt = horizon / n as f64;
    let has_extremal = lagrangian.extremal(start, end, horizon).is_some();
    let starts = starting_paths(lagrangian, start, end, horizon, opts);
    let mut free = vec![true; n + 1];
    free[0] = false;
    free[n] = false;

    let polished: Vec<(Vec<f64>, f64, f64)> = starts
        .into_par_iter()
        .map(|s| {
            let initial = discrete_action(lagrangian, &s, dt);
            let (vals, value) = newton_descent(lagrangian, s, dt, &free, opts);
            (vals, value, initial)
        })
        .collect();

    let extremal_value = if has_extremal { Some(polished[0].2) } else { None };
    let restart_values: Vec<f64> = polished.iter().map(|p| p.1).filter(|v| v.is_finite()).collect();
    let best = polished
        .into_iter()
        .filter(|p| p.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(TrajectoryError::NoFeasiblePath)?;
    Ok(FixedSolution {
        path: TrajectoryGrid { horizon, values: best.0 },
        value: best.1,
        extremal_value,
        restart_values,
    })
}

/// Options for [`minimize_action_open_start`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpenStartOptions {
    pub solver: ActionSolver,
    /// Grid size of the initial scan over starting points.
    pub scan_points: usize,
    /// Distance kept from the edges of the initial cost's support.
    pub margin: f64,
    pub refine_tol: f64,
    /// Minimizers whose total cost exceeds the best by more than this are dropped.
    pub cluster_value_tol: f64,
    /// Minimizers closer than this in `γ_0` are merged.
    pub cluster_gamma_tol: f64,
}

impl Default for OpenStartOptions {
    fn default() -> Self {
        Self {
            solver: ActionSolver {
                heuristic_starts: false,
                jitter_starts: 0,
                ..ActionSolver::default()
            },
            scan_points: 161,
            margin: 1e-3,
            refine_tol: 1e-10,
            cluster_value_tol: 1e-5,
            cluster_gamma_tol: 1e-3,
        }
    }
}

/// One element of the optimal-start set.
#[derive(Debug, Clone)]
pub struct OpenStartMinimizer {
    pub gamma0: f64,
    /// Initial cost plus transition action.
    pub total_cost: f64,
    pub path: TrajectoryGrid,
    /// `|∂L/∂v(t=0) - I'(γ_0)|`.
    pub transversality: f64,
}

#[derive(Debug, Clone)]
pub struct OpenStartSolution {
    /// Clustered global minimizers, sorted by `gamma0`.
    pub minimizers: Vec<OpenStartMinimizer>,
    /// Every refined local minimizer `(gamma0, total cost)`, sorted by `gamma0`.
    pub local_minima: Vec<(f64, f64)>,
}

impl OpenStartSolution {
    pub fn best_cost(&self) -> f64 {
        self.minimizers
            .iter()
            .map(|m| m.total_cost)
            .fold(f64::INFINITY, f64::min)
    }

    /// The single lowest-cost local minimizer, ignoring clustering.
    pub fn selected(&self) -> Option<(f64, f64)> {
        self.local_minima
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn golden_min(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Minimizes `I(γ_0) + ∫ L` over the free starting point and the path, with
/// the endpoint pinned at `end`.
///
/// The inner problem is solved exactly for each candidate start, so the
/// outer problem is one-dimensional: a grid scan locates every local
/// minimum of the profile `γ_0 ↦ I(γ_0) + K_T(γ_0, end)`, each is refined by
/// golden-section search, and the global ones are clustered.
pub fn minimize_action_open_start<L: Lagrangian + ?Sized, I: InitialCost + ?Sized>(
    lagrangian: &L,
    initial: &I,
    end: f64,
    horizon: f64,
    opts: &OpenStartOptions,
) -> Result<OpenStartSolution, TrajectoryError> {
    let (slo, shi) = initial.support();
    let (blo, bhi) = lagrangian.state_bounds();
    let lo = slo.max(blo) + opts.margin;
    let hi = shi.min(bhi) - opts.margin;
    if !(lo < hi) {
        return Err(TrajectoryError::InvalidInput("initial cost has an empty support".into()));
    }
    let profile = |x: f64| -> f64 {
        match minimize_action_fixed(lagrangian, x, end, horizon, &opts.solver) {
            Ok(sol) => initial.value(x) + sol.value,
            Err(_) => f64::INFINITY,
        }
    };
    let n = opts.scan_points.max(3);
    let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let values: Vec<f64> = grid.par_iter().map(|&x| profile(x)).collect();
    if values.iter().all(|v| !v.is_finite()) {
        return Err(TrajectoryError::NoFeasiblePath);
    }

    let mut brackets = Vec::new();
    for i in 0..n {
        let left = if i == 0 { f64::INFINITY } else { values[i - 1] };
        let right = if i == n - 1 { f64::INFINITY } else { values[i + 1] };
        if values[i].is_finite() && values[i] <= left && values[i] < right {
            brackets.push((grid[i.saturating_sub(1)], grid[(i + 1).min(n - 1)]));
        }
    }
    let mut local: Vec<(f64, f64)> = brackets
        .par_iter()
        .map(|&(a, b)| golden_min(&profile, a, b, opts.refine_tol))
        .collect();
    local.sort_by(|a, b| a.0.total_cmp(&b.0));

    let best = local.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for &(g, v) in &local {
        if v > best + opts.cluster_value_tol {
            continue;
        }
        match kept.last_mut() {
            Some(last) if (g - last.0).abs() <= opts.cluster_gamma_tol => {
                if v < last.1 {
                    *last = (g, v);
                }
            }
            _ => kept.push((g, v)),
        }
    }

    let minimizers = kept
        .into_iter()
        .map(|(g, v)| {
            let sol = minimize_action_fixed(lagrangian, g, end, horizon, &opts.solver)?;
            let p0 = initial_momentum(lagrangian, &sol.path);
            Ok(OpenStartMinimizer {
                gamma0: g,
                total_cost: v,
                transversality: (p0 - initial.derivative(g)).abs(),
                path: sol.path,
            })
        })
        .collect::<Result<Vec<_>, TrajectoryError>>()?;
    Ok(OpenStartSolution {
        minimizers,
        local_minima: local,
    })
}

/// Sampled solution of Hamilton's equations.
#[derive(Debug, Clone)]
pub struct HamiltonFlow {
    pub times: Vec<f64>,
    pub position: Vec<f64>,
    pub momentum: Vec<f64>,
    /// `max_t |H(m(t), p(t)) − H(m_0, p_0)|`.
    pub max_energy_drift: f64,
}

/// Classical fourth-order Runge-Kutta integration of `(ṁ, ṗ) = rhs(m, p)`.
///
/// `dt` is shrunk so that an integer number of steps covers `[0, T]`.
pub fn hamilton_flow_integrate<R, E>(
    rhs: R,
    energy: E,
    bounds: (f64, f64),
    m0: f64,
    p0: f64,
    horizon: f64,
    dt: f64,
) -> Result<HamiltonFlow, TrajectoryError>
where
    R: Fn(f64, f64) -> (f64, f64),
    E: Fn(f64, f64) -> f64,
{
    if !(horizon > 0.0) || !(dt > 0.0) || dt > horizon / 100.0 {
        return Err(TrajectoryError::InvalidInput(format!(
            "need 0 < dt <= T/100, got dt = {dt}, T = {horizon}"
        )));
    }
    let steps = (horizon / dt).ceil() as usize;
    let h = horizon / steps as f64;
    let e0 = energy(m0, p0);
    let (mut m, mut p) = (m0, p0);
    let mut flow = HamiltonFlow {
        times: Vec::with_capacity(steps + 1),
        position: Vec::with_capacity(steps + 1),
        momentum: Vec::with_capacity(steps + 1),
        max_energy_drift: 0.0,
    };
    flow.times.push(0.0);
    flow.position.push(m);
    flow.momentum.push(p);
    for i in 1..=steps {
        let (k1m, k1p) = rhs(m, p);
        let (k2m, k2p) = rhs(m + 0.5 * h * k1m, p + 0.5 * h * k1p);
        let (k3m, k3p) = rhs(m + 0.5 * h * k2m, p + 0.5 * h * k2p);
        let (k4m, k4p) = rhs(m + h * k3m, p + h * k3p);
        m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        p += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        let t = h * i as f64;
        if !(m >= bounds.0 && m <= bounds.1) {
            return Err(TrajectoryError::DomainExit { t, value: m });
        }
        flow.max_energy_drift = flow.max_energy_drift.max((energy(m, p) - e0).abs());
        flow.times.push(t);
        flow.position.push(m);
        flow.momentum.push(p);
    }
    Ok(flow)
}

/// Checks that a path stays in the Lagrangian's admissible interval.
pub fn validate_path<L: Lagrangian + ?Sized>(lagrangian: &L, traj: &TrajectoryGrid) -> Result<(), TrajectoryError> {
    if traj.within(lagrangian.state_bounds()) {
        Ok(())
    } else {
        let bounds = lagrangian.state_bounds();
        let (i, &v) = traj
            .values
            .iter()
            .enumerate()
            .find(|(_, &v)| v < bounds.0 || v > bounds.1)
            .expect("some node is out of bounds");
        Err(TrajectoryError::DomainExit { t: traj.dt() * i as f64, value: v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `L(x, v) = (v − a)² / 2`, a pure velocity cost with drift `a`.
    struct Quadratic {
        drift: f64,
    }

    impl Lagrangian for Quadratic {
        fn value(&self, _x: f64, v: f64) -> f64 {
            0.5 * (v - self.drift).powi(2)
        }
        fn drift(&self, _x: f64) -> f64 {
            self.drift
        }
    }

    /// Harmonic oscillator `L = (v² − x²)/2` on a short horizon.
    struct Oscillator;

    impl Lagrangian for Oscillator {
        fn value(&self, x: f64, v: f64) -> f64 {
            0.5 * (v * v - x * x)
        }
        fn drift(&self, _x: f64) -> f64 {
            0.0
        }
    }

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let diag = [4.0, 5.0, 6.0, 3.0];
        let off = [1.0, -2.0, 0.5];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = solve_tridiagonal(&diag, &off, 0.0, &rhs).unwrap();
        for i in 0..4 {
            let mut r = diag[i] * x[i];
            if i > 0 {
                r += off[i - 1] * x[i - 1];
            }
            if i < 3 {
                r += off[i] * x[i + 1];
            }
            assert!((r - rhs[i]).abs() < 1e-12);
        }
        assert!(solve_tridiagonal(&[-1.0, 1.0], &[0.0], 0.0, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn quadratic_minimizer_is_linear() {
        let l = Quadratic { drift: 0.3 };
        let sol = minimize_action_fixed(&l, 0.0, 2.0, 2.0, &ActionSolver::default()).unwrap();
        for (t, v) in sol.path.times().zip(sol.path.values()) {
            assert!((v - t).abs() < 1e-9);
        }
        assert!((sol.value - 2.0 * 0.5 * 0.7f64.powi(2)).abs() < 1e-10);
    }

    #[test]
    fn oscillator_matches_sine_solution() {
        // x(t) = sin(t)/sin(1) solves ẍ = −x with x(0)=0, x(1)=1.
        let sol = minimize_action_fixed(&Oscillator, 0.0, 1.0, 1.0, &ActionSolver::default()).unwrap();
        let dt = sol.path.dt();
        for (i, v) in sol.path.values().iter().enumerate() {
            let t = dt * i as f64;
            assert!((v - t.sin() / 1f64.sin()).abs() < 1e-5);
        }
        assert!(euler_lagrange_residual(&Oscillator, &sol.path) < 1e-6);
    }

    #[test]
    fn action_is_additive_over_segments() {
        let l = Oscillator;
        let path = TrajectoryGrid::sample(2.0, 200, |t| (1.3 * t).cos()).unwrap();
        let whole = action_integral(&l, &path);
        let left = TrajectoryGrid::new(1.0, path.values()[..=100].to_vec()).unwrap();
        let right = TrajectoryGrid::new(1.0, path.values()[100..].to_vec()).unwrap();
        let parts = action_integral(&l, &left) + action_integral(&l, &right);
        assert!((whole - parts).abs() < 1e-13);
    }

    #[test]
    fn rk4_conserves_oscillator_energy() {
        let flow = hamilton_flow_integrate(
            |m, p| (p, -m),
            |m, p| 0.5 * (m * m + p * p),
            (-10.0, 10.0),
            1.0,
            0.0,
            1.0,
            1e-3,
        )
        .unwrap();
        assert!(flow.max_energy_drift < 1e-12);
        assert!((flow.position.last().unwrap() - 1f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn rk4_rejects_coarse_step_and_domain_exit() {
        let coarse = hamilton_flow_integrate(|_, p| (p, 0.0), |_, _| 0.0, (-1.0, 1.0), 0.0, 1.0, 1.0, 0.1);
        assert!(matches!(coarse, Err(TrajectoryError::InvalidInput(_))));
        let exit = hamilton_flow_integrate(|_, p| (p, 0.0), |_, _| 0.0, (-1.0, 1.0), 0.0, 2.0, 1.0, 1e-3);
        assert!(matches!(exit, Err(TrajectoryError::DomainExit { .. })));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let path = TrajectoryGrid::sample(1.0, 2, |t| t).unwrap();
        assert_eq!(path.to_csv(), "t,value\n0,0\n0.5,0.5\n1,1\n");
    }

    #[test]
    fn infeasible_everywhere_is_reported() {
        struct Never;
        impl Lagrangian for Never {
            fn value(&self, _x: f64, _v: f64) -> f64 {
                f64::INFINITY
            }
            fn drift(&self, _x: f64) -> f64 {
                0.0
            }
        }
        let err = minimize_action_fixed(&Never, 0.0, 1.0, 1.0, &ActionSolver::default()).unwrap_err();
        assert_eq!(err, TrajectoryError::NoFeasiblePath);
    }
}
