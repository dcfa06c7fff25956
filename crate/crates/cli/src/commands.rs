//! One function per subcommand. Each returns the files to write and a
//! short summary; nothing touches the filesystem here.

use std::fmt::{Debug, Display, Write as _};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spinflip_ldp::badness::{badness_scan, BadnessOptions, RateFunctionSpec};
use spinflip_ldp::finite_jump::fd_compare;
use spinflip_ldp::lattice::{
    glauber_simulate_observed, moment_replicas, nonlinear_generator_exact, nonlinear_generator_general,
    CoefficientMap, LocalRateSpec, Offset, SpinConfiguration,
};
use spinflip_ldp::magnetization::{
    mag_exact_log_prob, mag_extremal, MagRateRow, MagnetizationLagrangian, MAG_RATE_CSV_HEADER,
};
use spinflip_ldp::poisson_walk::{pw_rate_convergence, pw_rate_csv, PoissonWalkParams};
use spinflip_ldp::seeds::derive_seed;
use spinflip_ldp::trajectory::{
    action_integral, euler_lagrange_residual, minimize_action_fixed, ActionSolver, TrajectoryGrid,
};
use spinflip_ldp::verify::{results_csv, run_all, VerifyConfig};

use crate::config::{
    rate_table, FdConfig, InitialConfig, LatticeCheckConfig, LatticeSimConfig, MagBvpConfig, MagRateConfig,
    PwRateConfig, ScanBadConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunError {
    pub name: String,
    pub message: String,
}

impl Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.name, self.message)
    }
}

/// `Type::Variant` of a module error.
fn error_name<E: Debug>(e: &E) -> String {
    let ty = std::any::type_name::<E>().rsplit("::").next().unwrap_or("Error");
    let dbg = format!("{e:?}");
    let variant: String = dbg.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    format!("{ty}::{variant}")
}

fn rt<E: Debug + Display>(e: E) -> RunError {
    RunError {
        name: error_name(&e),
        message: e.to_string(),
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub summary: Vec<String>,
    /// Set when the command ran but one of its checks did not hold.
    pub failed: Option<String>,
}

const L: MagnetizationLagrangian = MagnetizationLagrangian;

pub fn pw_rate(cfg: &PwRateConfig) -> Result<Outcome, RunError> {
    let params = PoissonWalkParams::new(cfg.b, cfg.d, 1).map_err(rt)?;
    let mut rows = Vec::new();
    for a in cfg.a.values() {
        rows.extend(pw_rate_convergence(&params, &cfg.n, cfg.t, a).map_err(rt)?);
    }
    let worst = rows
        .iter()
        .filter(|r| r.n == *cfg.n.iter().max().unwrap_or(&0))
        .map(|r| r.gap)
        .fold(0.0f64, f64::max);
    Ok(Outcome {
        files: vec![("pw_rate.csv".into(), pw_rate_csv(&rows))],
        summary: vec![format!("{} rows, largest gap at the largest N: {worst}", rows.len())],
        failed: None,
    })
}

pub fn mag_rate(cfg: &MagRateConfig) -> Result<Outcome, RunError> {
    let solver = ActionSolver {
        steps: cfg.steps,
        ..ActionSolver::default()
    };
    let action = minimize_action_fixed(&L, cfg.m0, cfg.m_end, cfg.horizon, &solver).map_err(rt)?.value;
    let mut csv = String::from(MAG_RATE_CSV_HEADER);
    csv.push('\n');
    let mut summary = vec![format!("minimized action {action}")];
    for &n in &cfg.n {
        let exact_rate = -mag_exact_log_prob(n, cfg.m0, cfg.horizon, cfg.m_end).map_err(rt)? / n as f64;
        let row = MagRateRow {
            n,
            m0: cfg.m0,
            horizon: cfg.horizon,
            mt: cfg.m_end,
            exact_rate,
            action,
            gap: (exact_rate - action).abs(),
        };
        summary.push(format!("N = {n}: exact rate {exact_rate}, gap {}", row.gap));
        csv.push_str(&row.csv_line());
        csv.push('\n');
    }
    Ok(Outcome {
        files: vec![("mag_rate.csv".into(), csv)],
        summary,
        failed: None,
    })
}

pub fn mag_bvp(cfg: &MagBvpConfig) -> Result<Outcome, RunError> {
    let ext = mag_extremal(cfg.m0, cfg.m_end, cfg.horizon).map_err(rt)?;
    let solver = ActionSolver {
        steps: cfg.steps,
        ..ActionSolver::default()
    };
    let sol = minimize_action_fixed(&L, cfg.m0, cfg.m_end, cfg.horizon, &solver).map_err(rt)?;
    let grid = TrajectoryGrid::sample(cfg.horizon, cfg.steps, |t| ext.at(t)).map_err(rt)?;
    let ext_action = action_integral(&L, &grid);
    let summary_json = serde_json::json!({
        "m0": cfg.m0,
        "m_end": cfg.m_end,
        "horizon": cfg.horizon,
        "steps": cfg.steps,
        "c1": ext.c1,
        "c2": ext.c2,
        "action": sol.value,
        "extremal_action": ext_action,
        "el_residual": euler_lagrange_residual(&L, &sol.path),
        "extremal_el_residual": euler_lagrange_residual(&L, &grid),
    });
    Ok(Outcome {
        files: vec![
            ("mag_bvp.csv".into(), sol.path.to_csv()),
            ("mag_bvp_extremal.csv".into(), grid.to_csv()),
            ("mag_bvp.json".into(), pretty(&summary_json)),
        ],
        summary: vec![
            format!("C1 = {}, C2 = {}", ext.c1, ext.c2),
            format!("action {} (extremal {ext_action})", sol.value),
        ],
        failed: None,
    })
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).unwrap_or_default();
    s.push('\n');
    s
}

pub fn fd_lagrangian(cfg: &FdConfig) -> Result<Outcome, RunError> {
    let model = cfg.model().map_err(|m| RunError {
        name: "FiniteJumpError::InvalidModel".into(),
        message: m,
    })?;
    let cmp = fd_compare(&model, &cfg.alpha).map_err(rt)?;
    let text = pretty(&cmp);
    Ok(Outcome {
        summary: vec![text.trim_end().to_string()],
        files: vec![("fd_lagrangian.json".into(), text)],
        failed: None,
    })
}

pub fn scan_bad(cfg: &ScanBadConfig, seed: u64) -> Result<Outcome, RunError> {
    let rate = RateFunctionSpec::new(cfg.rate.clone()).map_err(rt)?;
    let mut opts = BadnessOptions::default();
    if let Some(s) = cfg.scan_points {
        opts.open.scan_points = s;
    }
    if let Some(s) = cfg.steps {
        opts.open.solver.steps = s;
    }
    let res = badness_scan(&L, &rate, &cfg.horizons.values(), &cfg.m_ends.values(), &opts, seed);
    let errors = res.cells.iter().filter(|c| c.outcome.is_err()).count();
    Ok(Outcome {
        summary: vec![format!(
            "{} cells, {} bad, {errors} errors",
            res.cells.len(),
            res.bad_count()
        )],
        files: vec![("scan_bad.csv".into(), res.to_csv())],
        failed: None,
    })
}

fn set_label(set: &[Offset]) -> String {
    set.iter().map(|(x, y)| format!("{x}:{y}")).collect::<Vec<_>>().join(" ")
}

fn initial_config(cfg: &LatticeSimConfig, seed: u64) -> Result<SpinConfiguration, RunError> {
    match cfg.initial {
        InitialConfig::Constant { value } => SpinConfiguration::constant(cfg.dim, cfg.radius, value),
        InitialConfig::Product { bias } => {
            SpinConfiguration::random_product(cfg.dim, cfg.radius, bias, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    }
    .map_err(rt)
}

fn mean_se(col: &[f64]) -> (f64, f64) {
    let k = col.len() as f64;
    let mean = col.iter().sum::<f64>() / k;
    if col.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

pub fn lattice_sim(cfg: &LatticeSimConfig, seed: u64) -> Result<Outcome, RunError> {
    let start = initial_config(cfg, derive_seed(seed, 0))?;
    let rates = rate_table(cfg.dim, &cfg.rates, derive_seed(seed, 1)).map_err(|m| RunError {
        name: "LatticeError::InvalidRates".into(),
        message: m,
    })?;
    let obs = cfg.observable_maps();
    let rows = moment_replicas(&start, &rates, &cfg.times, &obs, cfg.replicas, derive_seed(seed, 2)).map_err(rt)?;

    let mut series = String::from("replica,t,observable,set,value\n");
    let mut summary_csv = String::from("t,observable,set,mean,se\n");
    let mut summary = Vec::new();
    for (ti, t) in cfg.times.iter().enumerate() {
        for (oi, set) in cfg.observables.iter().enumerate() {
            let label = set_label(set);
            let col: Vec<f64> = rows.iter().map(|r| r[ti * obs.len() + oi]).collect();
            for (r, v) in col.iter().enumerate() {
                let _ = writeln!(series, "{r},{t},{oi},{label},{v}");
            }
            let (mean, se) = mean_se(&col);
            let _ = writeln!(summary_csv, "{t},{oi},{label},{mean},{se}");
            summary.push(format!("t = {t}, set [{label}]: mean {mean}, se {se}"));
        }
    }
    let mut files = vec![
        ("lattice_moments.csv".into(), series),
        ("lattice_moment_summary.csv".into(), summary_csv),
        ("lattice_rates.json".into(), rates.to_json() + "\n"),
        ("lattice_initial.txt".into(), start.to_text()),
    ];
    if cfg.record_events {
        let run = glauber_simulate_observed(&start, &rates, cfg.horizon(), &cfg.times, true, derive_seed(seed, 3))
            .map_err(rt)?;
        summary.push(format!("recorded run: {} events", run.events.len()));
        files.push(("lattice_events.csv".into(), run.events_csv()));
        files.push(("lattice_final.txt".into(), run.config.to_text()));
    }
    Ok(Outcome {
        files,
        summary,
        failed: None,
    })
}

/// Gap between the finite-volume value and its limit for `Ψ(x) = x²`,
/// `f = H_{0}` on the all-plus state under unit rates.
fn scaling_row(radius: usize) -> Result<(usize, f64, f64), RunError> {
    let c = SpinConfiguration::constant(1, radius, 1).map_err(rt)?;
    let unit = LocalRateSpec::constant(1, 1.0).map_err(rt)?;
    let f = CoefficientMap::basis(vec![(0, 0)], 1.0);
    let (finite, limit) = nonlinear_generator_general(
        &c,
        &|x: &[f64]| x[0] * x[0],
        &|x: &[f64]| vec![2.0 * x[0]],
        std::slice::from_ref(&f),
        &unit,
    )
    .map_err(rt)?;
    Ok((c.side(), finite, limit))
}

pub fn lattice_check(cfg: &LatticeCheckConfig, seed: u64) -> Result<Outcome, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut identity = String::from("instance,dim,side,lhs,rhs,abs_diff\n");
    let mut worst = 0.0f64;
    for i in 0..cfg.instances {
        let (dim, radius) = if i % 2 == 0 { (1, cfg.radius_d1) } else { (2, cfg.radius_d2) };
        let c = SpinConfiguration::random_product(dim, radius, 0.0, &mut rng).map_err(rt)?;
        let rates = LocalRateSpec::random(dim, cfg.rate_radius, cfg.rate_lo, cfg.rate_hi, &mut rng).map_err(rt)?;
        let f = CoefficientMap::random(dim, cfg.max_sets, cfg.max_size, cfg.max_offset, 1.0, &mut rng);
        let (lhs, rhs) = nonlinear_generator_exact(&c, &f, &rates).map_err(rt)?;
        let diff = (lhs - rhs).abs();
        worst = worst.max(diff);
        let _ = writeln!(identity, "{i},{dim},{},{lhs},{rhs},{diff}", c.side());
    }

    let mut scaling = String::from("side,finite,limit,gap\n");
    let mut pts = Vec::new();
    for &r in &cfg.scaling_radii {
        let (side, finite, limit) = scaling_row(r)?;
        let gap = (finite - limit).abs();
        let _ = writeln!(scaling, "{side},{finite},{limit},{gap}");
        pts.push(((side as f64).ln(), gap.ln()));
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();

    let identity_ok = worst <= 1e-12;
    let slope_ok = (slope + 1.0).abs() <= 0.2;
    let report = serde_json::json!({
        "instances": cfg.instances,
        "max_abs_diff": worst,
        "identity_pass": identity_ok,
        "scaling_slope": slope,
        "scaling_pass": slope_ok,
    });
    Ok(Outcome {
        files: vec![
            ("lattice_identity.csv".into(), identity),
            ("lattice_scaling.csv".into(), scaling),
            ("lattice_check.json".into(), pretty(&report)),
        ],
        summary: vec![
            format!("identity: {} instances, max |lhs - rhs| {worst:e}", cfg.instances),
            format!("finite-size slope {slope}"),
        ],
        failed: (!(identity_ok && slope_ok)).then(|| "CheckFailed".to_string()),
    })
}

pub fn verify(cfg: &VerifyConfig, seed: u64) -> Result<Outcome, RunError> {
    let cfg = VerifyConfig { seed, ..cfg.clone() };
    let results = run_all(&cfg);
    let failures = results.iter().filter(|r| !r.passed).count();
    let mut summary: Vec<String> = results.iter().map(|r| r.line()).collect();
    summary.push(format!("{} of {} checks passed", results.len() - failures, results.len()));
    Ok(Outcome {
        files: vec![("verify.csv".into(), results_csv(&results))],
        summary,
        failed: (failures > 0).then(|| "VerificationFailed".to_string()),
    })
}
