//! Optimal initial conditions for a conditioned endpoint, detection of
//! endpoints with several optimal histories, and the nature/nurture label.
//!
//! The total cost of starting at `γ_0` and ending at `m_T` after time `T` is
//! `I(γ_0) + K_T(γ_0, m_T)`, with `I` a static rate function on `[−1, 1]`
//! and `K_T` the minimal action. An endpoint is *bad* when the set of
//! optimal starts has at least two elements and both can be reached as
//! limits of unique optimal starts for endpoints approaching `m_T` from the
//! two sides.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::derive_seed;
use crate::trajectory::{
    minimize_action_fixed, minimize_action_open_start, ActionSolver, InitialCost, Lagrangian, OpenStartOptions,
    OpenStartSolution, TrajectoryError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BadnessError {
    #[error("invalid rate function: {0}")]
    InvalidRateFunction(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl BadnessError {
    pub fn name(&self) -> &'static str {
        match self {
            BadnessError::InvalidRateFunction(_) => "InvalidRateFunction",
            BadnessError::Trajectory(TrajectoryError::NoFeasiblePath) => "NoFeasiblePath",
            BadnessError::Trajectory(TrajectoryError::DomainExit { .. }) => "DomainExit",
            BadnessError::Trajectory(TrajectoryError::InvalidInput(_)) => "InvalidInput",
        }
    }
}

/// Serializable description of a rate function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateFunctionKind {
    Bernoulli { y: f64 },
    DoubleWell { beta: f64 },
    /// Piecewise-linear interpolation of `values` on the increasing grid `m`.
    Tabulated { m: Vec<f64>, values: Vec<f64> },
}

/// A normalized rate function `I` (minimum 0) on a subinterval of `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunctionSpec {
    kind: RateFunctionKind,
    shift: f64,
    wells: Vec<f64>,
}

fn bernoulli_entropy(m: f64, y: f64) -> f64 {
    let term = |p: f64, q: f64| if p == 0.0 { 0.0 } else { p * (p / q).ln() };
    term(0.5 * (1.0 + m), 0.5 * (1.0 + y)) + term(0.5 * (1.0 - m), 0.5 * (1.0 - y))
}

/// Positive root of `m = tanh(βm)` (zero for `β ≤ 1`).
pub fn mean_field_magnetization(beta: f64) -> f64 {
    if beta <= 1.0 {
        return 0.0;
    }
    let mut m: f64 = 1.0;
    for _ in 0..200 {
        let g = m - (beta * m).tanh();
        let dg = 1.0 - beta / (beta * m).cosh().powi(2);
        let next = m - g / dg;
        if (next - m).abs() < 1e-16 {
            m = next;
            break;
        }
        m = next;
    }
    m
}

impl RateFunctionSpec {
    pub fn new(kind: RateFunctionKind) -> Result<Self, BadnessError> {
        match &kind {
            RateFunctionKind::Bernoulli { y } => {
                if !(y.abs() < 1.0) {
                    return Err(BadnessError::InvalidRateFunction(format!("bernoulli needs |y| < 1, got {y}")));
                }
                Ok(Self { wells: vec![*y], kind, shift: 0.0 })
            }
            RateFunctionKind::DoubleWell { beta } => {
                if !(beta.is_finite() && *beta >= 0.0) {
                    return Err(BadnessError::InvalidRateFunction(format!("double_well needs β ≥ 0, got {beta}")));
                }
                let mb = mean_field_magnetization(*beta);
                let shift = bernoulli_entropy(mb, 0.0) - 0.5 * beta * mb * mb;
                let wells = if mb > 0.0 { vec![-mb, mb] } else { vec![0.0] };
                Ok(Self { kind, shift, wells })
            }
            RateFunctionKind::Tabulated { m, values } => {
                if m.len() < 2 || m.len() != values.len() {
                    return Err(BadnessError::InvalidRateFunction("tabulated needs ≥ 2 matching points".into()));
                }
                if m.windows(2).any(|w| w[1] <= w[0]) || m[0] < -1.0 || m[m.len() - 1] > 1.0 {
                    return Err(BadnessError::InvalidRateFunction("grid must increase within [−1, 1]".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(BadnessError::InvalidRateFunction("tabulated values must be finite".into()));
                }
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let wells = m
                    .iter()
                    .zip(values)
                    .filter(|(_, &v)| v - lo <= 1e-12)
                    .map(|(&x, _)| x)
                    .collect();
                Ok(Self { kind, shift: lo, wells })
            }
        }
    }

    pub fn bernoulli(y: f64) -> Result<Self, BadnessError> {
        Self::new(RateFunctionKind::Bernoulli { y })
    }

    pub fn double_well(beta: f64) -> Result<Self, BadnessError> {
        Self::new(RateFunctionKind::DoubleWell { beta })
    }

    pub fn tabulated(m: Vec<f64>, values: Vec<f64>) -> Result<Self, BadnessError> {
        Self::new(RateFunctionKind::Tabulated { m, values })
    }

    pub fn kind(&self) -> &RateFunctionKind {
        &self.kind
    }

    /// Minimizers of `I`.
    pub fn wells(&self) -> &[f64] {
        &self.wells
    }

    /// Distance from `x` to the nearest minimizer of `I`.
    pub fn distance_to_wells(&self, x: f64) -> f64 {
        self.wells.iter().map(|w| (x - w).abs()).fold(f64::INFINITY, f64::min)
    }

    fn segment(m: &[f64], x: f64) -> Option<usize> {
        if x < m[0] || x > m[m.len() - 1] {
            return None;
        }
        Some(m.partition_point(|&g| g <= x).clamp(1, m.len() - 1) - 1)
    }
}

impl InitialCost for RateFunctionSpec {
    fn value(&self, x: f64) -> f64 {
        if !(-1.0..=1.0).contains(&x) {
            return f64::INFINITY;
        }
        match &self.kind {
            RateFunctionKind::Bernoulli { y } => bernoulli_entropy(x, *y),
            RateFunctionKind::DoubleWell { beta } => bernoulli_entropy(x, 0.0) - 0.5 * beta * x * x - self.shift,
            RateFunctionKind::Tabulated { m, values } => match Self::segment(m, x) {
                None => f64::INFINITY,
                Some(i) => {
                    let w = (x - m[i]) / (m[i + 1] - m[i]);
                    values[i] + w * (values[i + 1] - values[i]) - self.shift
                }
            },
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match &self.kind {
            RateFunctionKind::Bernoulli { y } => x.atanh() - y.atanh(),
            RateFunctionKind::DoubleWell { beta } => x.atanh() - beta * x,
            RateFunctionKind::Tabulated { m, values } => match Self::segment(m, x) {
                None => f64::NAN,
                Some(i) => (values[i + 1] - values[i]) / (m[i + 1] - m[i]),
            },
        }
    }

    fn support(&self) -> (f64, f64) {
        match &self.kind {
            RateFunctionKind::Tabulated { m, .. } => (m[0], m[m.len() - 1]),
            _ => (-1.0, 1.0),
        }
    }
}

/// `K_T(m_start, m_end)`: minimal action over fixed-endpoint paths.
pub fn transition_cost<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    m_start: f64,
    m_end: f64,
    horizon: f64,
    solver: &ActionSolver,
) -> Result<f64, TrajectoryError> {
    Ok(minimize_action_fixed(lagrangian, m_start, m_end, horizon, solver)?.value)
}

/// The clustered set of optimal starts for endpoint `m_end`.
pub fn optimal_initials<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    rate: &RateFunctionSpec,
    m_end: f64,
    horizon: f64,
    opts: &OpenStartOptions,
) -> Result<OpenStartSolution, TrajectoryError> {
    minimize_action_open_start(lagrangian, rate, m_end, horizon, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BadnessOptions {
    pub open: OpenStartOptions,
    /// Minimal separation of the two limiting starts.
    pub epsilon: f64,
    /// Largest endpoint perturbation; levels use `δ·2^{−n}`.
    pub delta: f64,
    pub levels: u32,
}

impl Default for BadnessOptions {
    fn default() -> Self {
        Self {
            open: OpenStartOptions::default(),
            epsilon: 1e-2,
            delta: 0.05,
            levels: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BadnessDiagnostics {
    pub bad: bool,
    /// Clustered optimal starts `(γ_0, total cost)`.
    pub minimizers: Vec<(f64, f64)>,
    /// Selected start for `m_T + δ·2^{−n}`, `n = 0, 1, …`.
    pub upper_branch: Vec<f64>,
    /// Selected start for `m_T − δ·2^{−n}`.
    pub lower_branch: Vec<f64>,
    /// Optimal starts the two branches approach, when identifiable.
    pub upper_limit: Option<f64>,
    pub lower_limit: Option<f64>,
    pub reason: String,
}

/// Index of the element of `set` nearest to `x`, provided `x` is strictly
/// closer to it than to any other element.
fn nearest(set: &[f64], x: f64) -> Option<usize> {
    let mut idx: Vec<usize> = (0..set.len()).collect();
    idx.sort_by(|&a, &b| (set[a] - x).abs().total_cmp(&(set[b] - x).abs()));
    match idx.as_slice() {
        [] => None,
        [only] => Some(*only),
        [a, b, ..] => ((set[*a] - x).abs() < (set[*b] - x).abs()).then_some(*a),
    }
}

fn branch<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    rate: &RateFunctionSpec,
    m_end: f64,
    horizon: f64,
    opts: &BadnessOptions,
    sign: f64,
) -> Vec<f64> {
    (0..opts.levels)
        .map(|n| {
            let target = m_end + sign * opts.delta * 0.5f64.powi(n as i32);
            if !(-1.0..=1.0).contains(&target) {
                return f64::NAN;
            }
            optimal_initials(lagrangian, rate, target, horizon, &opts.open)
                .ok()
                .and_then(|s| s.selected())
                .map_or(f64::NAN, |(g, _)| g)
        })
        .collect()
}

/// Decides whether `m_end` is a bad endpoint at time `horizon`.
pub fn is_bad<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    rate: &RateFunctionSpec,
    m_end: f64,
    horizon: f64,
    opts: &BadnessOptions,
) -> Result<BadnessDiagnostics, TrajectoryError> {
    let sol = optimal_initials(lagrangian, rate, m_end, horizon, &opts.open)?;
    is_bad_from(lagrangian, rate, m_end, horizon, opts, &sol)
}

fn is_bad_from<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    rate: &RateFunctionSpec,
    m_end: f64,
    horizon: f64,
    opts: &BadnessOptions,
    sol: &OpenStartSolution,
) -> Result<BadnessDiagnostics, TrajectoryError> {
    let minimizers: Vec<(f64, f64)> = sol.minimizers.iter().map(|m| (m.gamma0, m.total_cost)).collect();
    let mut diag = BadnessDiagnostics {
        bad: false,
        minimizers: minimizers.clone(),
        upper_branch: Vec::new(),
        lower_branch: Vec::new(),
        upper_limit: None,
        lower_limit: None,
        reason: String::new(),
    };
    if minimizers.len() < 2 {
        diag.reason = "unique optimal start".into();
        return Ok(diag);
    }
    let starts: Vec<f64> = minimizers.iter().map(|m| m.0).collect();
    diag.upper_branch = branch(lagrangian, rate, m_end, horizon, opts, 1.0);
    diag.lower_branch = branch(lagrangian, rate, m_end, horizon, opts, -1.0);
    // A branch identifies a limit when its two finest levels are both
    // nearest to the same optimal start.
    let limit = |b: &[f64]| -> Option<usize> {
        let tail = &b[b.len().saturating_sub(2)..];
        let first = nearest(&starts, *tail.first()?)?;
        tail.iter().all(|&g| g.is_finite() && nearest(&starts, g) == Some(first)).then_some(first)
    };
    let (up, lo) = (limit(&diag.upper_branch), limit(&diag.lower_branch));
    diag.upper_limit = up.map(|i| starts[i]);
    diag.lower_limit = lo.map(|i| starts[i]);
    match (up, lo) {
        (Some(a), Some(b)) if a != b && (starts[a] - starts[b]).abs() > opts.epsilon => {
            diag.bad = true;
            diag.reason = "perturbed endpoints select distinct optimal starts".into();
        }
        (Some(_), Some(_)) => diag.reason = "both perturbations select the same optimal start".into(),
        _ => diag.reason = "perturbed selections do not settle on an optimal start".into(),
    }
    Ok(diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NatureLabel {
    Nature,
    Nurture,
    Mixed,
}

impl NatureLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            NatureLabel::Nature => "nature",
            NatureLabel::Nurture => "nurture",
            NatureLabel::Mixed => "mixed",
        }
    }
}

/// Width of the tie band, as an absolute distance on `[−1, 1]`.
pub const NATURE_DEAD_BAND: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NatureNurture {
    pub gamma0: f64,
    /// `|γ_0 − m_T e^{2T}|`: distance to the start the free dynamics would
    /// carry to `m_T`.
    pub d_nature: f64,
    /// Distance to the nearest minimizer of `I`.
    pub d_nurture: f64,
    pub label: NatureLabel,
}

/// Labels one optimal start.
pub fn nature_nurture_label(rate: &RateFunctionSpec, gamma0: f64, m_end: f64, horizon: f64) -> NatureNurture {
    let d_nature = (gamma0 - m_end * (2.0 * horizon).exp()).abs();
    let d_nurture = rate.distance_to_wells(gamma0);
    let label = if (d_nature - d_nurture).abs() < NATURE_DEAD_BAND {
        NatureLabel::Mixed
    } else if d_nature < d_nurture {
        NatureLabel::Nature
    } else {
        NatureLabel::Nurture
    };
    NatureNurture {
        gamma0,
        d_nature,
        d_nurture,
        label,
    }
}

/// Labels every optimal start; the overall label is shared by all of
/// them or `mixed`.
pub fn nature_nurture_classify(
    rate: &RateFunctionSpec,
    solution: &OpenStartSolution,
    m_end: f64,
    horizon: f64,
) -> (NatureLabel, Vec<NatureNurture>) {
    let per: Vec<NatureNurture> = solution
        .minimizers
        .iter()
        .map(|m| nature_nurture_label(rate, m.gamma0, m_end, horizon))
        .collect();
    let overall = match per.first() {
        Some(first) if per.iter().all(|p| p.label == first.label) => first.label,
        _ => NatureLabel::Mixed,
    };
    (overall, per)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellOutcome {
    pub minimizers: Vec<(f64, f64)>,
    pub cost: f64,
    pub bad: bool,
    pub label: NatureLabel,
    pub d_nature: f64,
    pub d_nurture: f64,
    pub diagnostics: BadnessDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BadnessCell {
    pub horizon: f64,
    pub m_end: f64,
    pub outcome: Result<CellOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct BadnessScanResult {
    /// Cells in `T`-major order.
    pub cells: Vec<BadnessCell>,
}

pub const BADNESS_CSV_HEADER: &str = "T,mT,n_minimizers,gamma0_list,cost,bad,label,d_nature,d_nurture";

impl BadnessScanResult {
    pub fn bad_count(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(&c.outcome, Ok(o) if o.bad))
            .count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(BADNESS_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            match &c.outcome {
                Ok(o) => {
                    let list: Vec<String> = o.minimizers.iter().map(|m| format!("{}", m.0)).collect();
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{},{}\n",
                        c.horizon,
                        c.m_end,
                        o.minimizers.len(),
                        list.join(";"),
                        o.cost,
                        u8::from(o.bad),
                        o.label.as_str(),
                        o.d_nature,
                        o.d_nurture
                    ));
                }
                Err(name) => out.push_str(&format!("{},{},0,,NaN,0,error:{},NaN,NaN\n", c.horizon, c.m_end, name)),
            }
        }
        out
    }
}

fn scan_cell<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    rate: &RateFunctionSpec,
    m_end: f64,
    horizon: f64,
    opts: &BadnessOptions,
) -> Result<CellOutcome, BadnessError> {
    let sol = optimal_initials(lagrangian, rate, m_end, horizon, &opts.open)?;
    let diagnostics = is_bad_from(lagrangian, rate, m_end, horizon, opts, &sol)?;
    let (label, per) = nature_nurture_classify(rate, &sol, m_end, horizon);
    let lead = sol
        .minimizers
        .iter()
        .zip(&per)
        .min_by(|a, b| a.0.total_cost.total_cmp(&b.0.total_cost))
        .map(|(_, p)| *p);
    Ok(CellOutcome {
        minimizers: diagnostics.minimizers.clone(),
        cost: sol.best_cost(),
        bad: diagnostics.bad,
        label,
        d_nature: lead.map_or(f64::NAN, |p| p.d_nature),
        d_nurture: lead.map_or(f64::NAN, |p| p.d_nurture),
        diagnostics,
    })
}

/// Evaluates every `(T, m_T)` cell in parallel. Cell `k` (in `T`-major
/// order) runs with solver seed `derive_seed(master_seed, k)`; failures are
/// recorded per cell.
pub fn badness_scan<L: Lagrangian + ?Sized>(
    lagrangian: &L,
    rate: &RateFunctionSpec,
    horizons: &[f64],
    m_ends: &[f64],
    opts: &BadnessOptions,
    master_seed: u64,
) -> BadnessScanResult {
    let cells: Vec<(f64, f64)> = horizons
        .iter()
        .flat_map(|&t| m_ends.iter().map(move |&m| (t, m)))
        .collect();
    let cells = cells
        .par_iter()
        .enumerate()
        .map(|(k, &(t, m))| {
            let mut local = *opts;
            local.open.solver.seed = derive_seed(master_seed, k as u64);
            BadnessCell {
                horizon: t,
                m_end: m,
                outcome: scan_cell(lagrangian, rate, m, t, &local).map_err(|e| e.name().to_string()),
            }
        })
        .collect();
    BadnessScanResult { cells }
}
