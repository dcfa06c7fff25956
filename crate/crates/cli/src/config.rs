//! Experiment configuration: one JSON document with a block per command.
//!
//! Parsing and validation happen before any computation or file output.
//! Diagnostics carry the field path and, when it can be located, the line
//! of the offending key.

use std::fmt;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use spinflip_ldp::badness::{RateFunctionKind, RateFunctionSpec};
use spinflip_ldp::finite_jump::JumpModel;
use spinflip_ldp::lattice::{CoefficientMap, LocalRateSpec, Offset, SpinConfiguration};
use spinflip_ldp::poisson_walk::PoissonWalkParams;
use spinflip_ldp::verify::VerifyConfig;

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.json");

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.field.is_empty()) {
            (Some(l), false) => write!(f, "line {l}, field `{}`: {}", self.field, self.message),
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (None, false) => write!(f, "field `{}`: {}", self.field, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

/// Validation failure before the line number is attached.
#[derive(Debug)]
struct Invalid {
    path: Vec<String>,
    message: String,
}

fn invalid(path: &[&str], message: impl Into<String>) -> Invalid {
    Invalid {
        path: path.iter().map(|s| s.to_string()).collect(),
        message: message.into(),
    }
}

type Check = Result<(), Invalid>;

fn require(ok: bool, path: &[&str], message: &str) -> Check {
    if ok {
        Ok(())
    } else {
        Err(invalid(path, message))
    }
}

/// Explicit list or an evenly spaced (optionally log-spaced) range.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    List(Vec<f64>),
    Range {
        from: f64,
        to: f64,
        points: usize,
        #[serde(default)]
        log: bool,
    },
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Grid::List(ref v) => v.clone(),
            Grid::Range { from, to, points, log } => {
                if points == 1 {
                    return vec![from];
                }
                (0..points)
                    .map(|i| {
                        if i == 0 {
                            return from;
                        }
                        if i + 1 == points {
                            return to;
                        }
                        let s = i as f64 / (points - 1) as f64;
                        if log {
                            (from.ln() + (to.ln() - from.ln()) * s).exp()
                        } else {
                            from + (to - from) * s
                        }
                    })
                    .collect()
            }
        }
    }

    fn check(&self, path: &[&str], ok: impl Fn(f64) -> bool, what: &str) -> Check {
        if let Grid::Range { from, to, points, log } = *self {
            require((1..=100_000).contains(&points), path, "range needs between 1 and 100000 points")?;
            require(from.is_finite() && to.is_finite(), path, "range ends must be finite")?;
            require(!log || (from > 0.0 && to > 0.0), path, "log range needs positive ends")?;
        }
        let v = self.values();
        require(!v.is_empty(), path, "grid is empty")?;
        match v.iter().find(|&&x| !ok(x)) {
            Some(x) => Err(invalid(path, format!("value {x} is not {what}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PwRateConfig {
    pub b: f64,
    pub d: f64,
    pub t: f64,
    pub a: Grid,
    pub n: Vec<u64>,
}

impl PwRateConfig {
    fn validate(&self) -> Check {
        let p = "pw_rate";
        PoissonWalkParams::new(self.b, self.d, 1).map_err(|e| invalid(&[p, "b"], e.to_string()))?;
        require(self.t > 0.0 && self.t.is_finite(), &[p, "t"], "must be positive")?;
        self.a.check(&[p, "a"], f64::is_finite, "finite")?;
        require(!self.n.is_empty() && self.n.iter().all(|&n| n >= 1), &[p, "n"], "need positive sizes")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagRateConfig {
    pub m0: f64,
    pub m_end: f64,
    pub horizon: f64,
    pub n: Vec<u64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    400
}

fn on_lattice(n: u64, m: f64) -> bool {
    let count = n as f64 * (1.0 + m) / 2.0;
    (count - count.round()).abs() <= 1e-9 * n as f64
}

impl MagRateConfig {
    fn validate(&self) -> Check {
        let p = "mag_rate";
        require((-1.0..=1.0).contains(&self.m0), &[p, "m0"], "must lie in [-1, 1]")?;
        require((-1.0..=1.0).contains(&self.m_end), &[p, "m_end"], "must lie in [-1, 1]")?;
        require(self.horizon > 0.0 && self.horizon.is_finite(), &[p, "horizon"], "must be positive")?;
        require(self.steps >= 2, &[p, "steps"], "must be at least 2")?;
        require(!self.n.is_empty(), &[p, "n"], "need at least one size")?;
        for &n in &self.n {
            require(
                n >= 1 && on_lattice(n, self.m0) && on_lattice(n, self.m_end),
                &[p, "n"],
                &format!("N = {n} does not put m0 and m_end on the lattice (2/N)Z - 1"),
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagBvpConfig {
    pub m0: f64,
    pub m_end: f64,
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl MagBvpConfig {
    fn validate(&self) -> Check {
        let p = "mag_bvp";
        require(self.m0.abs() < 1.0, &[p, "m0"], "must lie in (-1, 1)")?;
        require(self.m_end.abs() < 1.0, &[p, "m_end"], "must lie in (-1, 1)")?;
        require(self.horizon > 0.0 && self.horizon.is_finite(), &[p, "horizon"], "must be positive")?;
        require(self.steps >= 2, &[p, "steps"], "must be at least 2")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConfig {
    pub d: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl FdConfig {
    pub fn model(&self) -> Result<JumpModel, String> {
        JumpModel::from_rows(&self.d, self.c.clone(), self.mu.clone()).map_err(|e| e.to_string())
    }

    fn validate(&self) -> Check {
        let p = "fd_lagrangian";
        self.model().map_err(|e| invalid(&[p, "d"], e))?;
        require(self.alpha.len() == self.d.len(), &[p, "alpha"], "length must match the number of states")?;
        require(self.alpha.iter().all(|a| a.is_finite()), &[p, "alpha"], "must be finite")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanBadConfig {
    pub rate: RateFunctionKind,
    pub horizons: Grid,
    pub m_ends: Grid,
    pub scan_points: Option<usize>,
    pub steps: Option<usize>,
}

impl ScanBadConfig {
    fn validate(&self) -> Check {
        let p = "scan_bad";
        RateFunctionSpec::new(self.rate.clone()).map_err(|e| invalid(&[p, "rate"], e.to_string()))?;
        self.horizons.check(&[p, "horizons"], |t| t > 0.0 && t.is_finite(), "a positive horizon")?;
        self.m_ends.check(&[p, "m_ends"], |m| m.abs() < 1.0, "inside (-1, 1)")?;
        if let Some(s) = self.scan_points {
            require(s >= 3, &[p, "scan_points"], "must be at least 3")?;
        }
        if let Some(s) = self.steps {
            require(s >= 2, &[p, "steps"], "must be at least 2")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Constant { value: i8 },
    /// Independent spins with mean `bias`, drawn once from the master seed.
    Product { bias: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatesConfig {
    Constant { rate: f64 },
    /// Pattern string to rate, as in the rate-table JSON format.
    Table {
        radius: usize,
        rates: std::collections::BTreeMap<String, f64>,
    },
    /// Table drawn uniformly in `[lo, hi)` from the master seed.
    Random { radius: usize, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSimConfig {
    pub dim: usize,
    pub radius: usize,
    pub initial: InitialConfig,
    pub rates: RatesConfig,
    pub times: Vec<f64>,
    pub observables: Vec<Vec<Offset>>,
    pub replicas: usize,
    #[serde(default)]
    pub record_events: bool,
}

impl LatticeSimConfig {
    pub fn horizon(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    pub fn observable_maps(&self) -> Vec<CoefficientMap> {
        self.observables.iter().map(|s| CoefficientMap::basis(s.clone(), 1.0)).collect()
    }

    fn validate(&self) -> Check {
        let p = "lattice_sim";
        require(self.dim == 1 || self.dim == 2, &[p, "dim"], "must be 1 or 2")?;
        require((1..=100_000).contains(&self.radius), &[p, "radius"], "must lie in [1, 100000]")?;
        require(
            self.dim == 1 || self.radius <= 1000,
            &[p, "radius"],
            "must be at most 1000 in two dimensions",
        )?;
        match self.initial {
            InitialConfig::Constant { value } => require(value == 1 || value == -1, &[p, "initial", "value"], "must be 1 or -1")?,
            InitialConfig::Product { bias } => require(bias.abs() <= 1.0, &[p, "initial", "bias"], "must lie in [-1, 1]")?,
        }
        match &self.rates {
            RatesConfig::Constant { rate } => require(*rate > 0.0 && rate.is_finite(), &[p, "rates", "rate"], "must be positive")?,
            RatesConfig::Table { .. } => {
                rate_table(self.dim, &self.rates, 0).map_err(|e| invalid(&[p, "rates"], e))?;
            }
            RatesConfig::Random { lo, hi, .. } => {
                require(*lo > 0.0 && hi >= lo && hi.is_finite(), &[p, "rates", "lo"], "need 0 < lo <= hi")?;
                rate_table(self.dim, &self.rates, 0).map_err(|e| invalid(&[p, "rates", "radius"], e))?;
            }
        }
        require(
            !self.times.is_empty() && self.times.iter().all(|t| *t >= 0.0 && t.is_finite()),
            &[p, "times"],
            "need non-negative observation times",
        )?;
        require(self.times.windows(2).all(|w| w[0] <= w[1]), &[p, "times"], "must be non-decreasing")?;
        require(!self.observables.is_empty(), &[p, "observables"], "need at least one set")?;
        let probe = SpinConfiguration::constant(self.dim, self.radius, 1).map_err(|e| invalid(&[p, "radius"], e.to_string()))?;
        for (i, set) in self.observables.iter().enumerate() {
            require(
                self.dim == 2 || set.iter().all(|o| o.1 == 0),
                &[p, "observables"],
                &format!("set {i} has a second coordinate in one dimension"),
            )?;
            CoefficientMap::basis(set.clone(), 1.0)
                .check_fits(&probe)
                .map_err(|e| invalid(&[p, "observables"], format!("set {i}: {e}")))?;
        }
        require(self.replicas >= 1, &[p, "replicas"], "must be positive")
    }
}

/// Builds the rate table; random tables are drawn from `seed`.
pub fn rate_table(dim: usize, cfg: &RatesConfig, seed: u64) -> Result<LocalRateSpec, String> {
    match cfg {
        RatesConfig::Constant { rate } => LocalRateSpec::constant(dim, *rate),
        RatesConfig::Table { radius, rates } => {
            let json = serde_json::json!({ "dim": dim, "radius": radius, "rates": rates });
            LocalRateSpec::from_json(&json.to_string())
        }
        RatesConfig::Random { radius, lo, hi } => {
            LocalRateSpec::random(dim, *radius, *lo, *hi, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    }
    .map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeCheckConfig {
    pub instances: usize,
    pub rate_lo: f64,
    pub rate_hi: f64,
    pub rate_radius: usize,
    pub max_sets: usize,
    pub max_size: usize,
    pub max_offset: i64,
    pub radius_d1: usize,
    pub radius_d2: usize,
    pub scaling_radii: Vec<usize>,
}

impl LatticeCheckConfig {
    fn validate(&self) -> Check {
        let p = "lattice_check";
        require(self.instances >= 1, &[p, "instances"], "must be positive")?;
        require(
            self.rate_lo > 0.0 && self.rate_hi >= self.rate_lo && self.rate_hi.is_finite(),
            &[p, "rate_lo"],
            "need 0 < rate_lo <= rate_hi",
        )?;
        require(self.rate_radius <= 1, &[p, "rate_radius"], "must be 0 or 1")?;
        require((1..=8).contains(&self.max_sets), &[p, "max_sets"], "must lie in [1, 8]")?;
        require((1..=6).contains(&self.max_size), &[p, "max_size"], "must lie in [1, 6]")?;
        require(self.max_offset >= 0, &[p, "max_offset"], "must be non-negative")?;
        for (name, r) in [("radius_d1", self.radius_d1), ("radius_d2", self.radius_d2)] {
            require(
                r as i64 >= self.max_offset + self.rate_radius as i64 && r <= 200,
                &[p, name],
                "must cover max_offset plus rate_radius and be at most 200",
            )?;
        }
        require(
            self.scaling_radii.len() >= 2 && self.scaling_radii.iter().all(|&r| (1..=100_000).contains(&r)),
            &[p, "scaling_radii"],
            "need at least two radii in [1, 100000]",
        )?;
        require(
            self.scaling_radii.windows(2).all(|w| w[0] < w[1]),
            &[p, "scaling_radii"],
            "must be increasing",
        )
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub pw_rate: Option<PwRateConfig>,
    pub mag_rate: Option<MagRateConfig>,
    pub mag_bvp: Option<MagBvpConfig>,
    pub fd_lagrangian: Option<FdConfig>,
    pub scan_bad: Option<ScanBadConfig>,
    pub lattice_sim: Option<LatticeSimConfig>,
    pub lattice_check: Option<LatticeCheckConfig>,
    pub verify: Option<VerifyConfig>,
}

/// Subcommands as they appear in the configuration document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    PwRate,
    MagRate,
    MagBvp,
    FdLagrangian,
    ScanBad,
    LatticeSim,
    LatticeCheck,
    Verify,
}

impl Block {
    pub fn key(self) -> &'static str {
        match self {
            Block::PwRate => "pw_rate",
            Block::MagRate => "mag_rate",
            Block::MagBvp => "mag_bvp",
            Block::FdLagrangian => "fd_lagrangian",
            Block::ScanBad => "scan_bad",
            Block::LatticeSim => "lattice_sim",
            Block::LatticeCheck => "lattice_check",
            Block::Verify => "verify",
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, Block::ScanBad | Block::LatticeSim | Block::LatticeCheck | Block::Verify)
    }
}

/// Line of the key reached by following `path` through the document text.
fn locate(text: &str, path: &[String]) -> Option<usize> {
    let mut pos = 0;
    for key in path {
        let needle = format!("\"{key}\"");
        pos += text[pos..].find(&needle)?;
    }
    Some(text[..pos].matches('\n').count() + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError {
            line: Some(e.line()),
            field: String::new(),
            message: e.to_string(),
        })
    }

    /// Checks the block needed by `block` and the seed requirement.
    pub fn validate_for(&self, block: Block, text: &str) -> Result<(), ConfigError> {
        let result = self.check_block(block);
        result.map_err(|inv| ConfigError {
            line: locate(text, &inv.path),
            field: inv.path.join("."),
            message: inv.message,
        })
    }

    fn check_block(&self, block: Block) -> Check {
        if block.stochastic() && self.seed.is_none() {
            return Err(invalid(&["seed"], format!("a master seed is required by {}", block.key())));
        }
        if let Some(w) = self.workers {
            require(w <= 1024, &["workers"], "must be at most 1024")?;
        }
        let missing = || invalid(&[block.key()], "block is missing");
        match block {
            Block::PwRate => self.pw_rate.as_ref().ok_or_else(missing)?.validate(),
            Block::MagRate => self.mag_rate.as_ref().ok_or_else(missing)?.validate(),
            Block::MagBvp => self.mag_bvp.as_ref().ok_or_else(missing)?.validate(),
            Block::FdLagrangian => self.fd_lagrangian.as_ref().ok_or_else(missing)?.validate(),
            Block::ScanBad => self.scan_bad.as_ref().ok_or_else(missing)?.validate(),
            Block::LatticeSim => self.lattice_sim.as_ref().ok_or_else(missing)?.validate(),
            Block::LatticeCheck => self.lattice_check.as_ref().ok_or_else(missing)?.validate(),
            Block::Verify => self
                .verify
                .as_ref()
                .ok_or_else(missing)?
                .validate()
                .map_err(|m| {
                    let (field, msg) = m.split_once(": ").unwrap_or(("", &m));
                    invalid(&["verify", field], msg)
                }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_hits_both_ends() {
        let g = Grid::Range {
            from: 0.05,
            to: 3.0,
            points: 40,
            log: true,
        };
        let v = g.values();
        assert_eq!(v.len(), 40);
        assert_eq!((v[0], v[39]), (0.05, 3.0));
        assert!(v.windows(2).all(|w| (w[1] / w[0] - v[1] / v[0]).abs() < 1e-12));
    }

    #[test]
    fn locate_follows_nested_keys() {
        let text = "{\n \"a\": {\"x\": 1},\n \"b\": {\n  \"x\": 2\n }\n}";
        assert_eq!(locate(text, &["b".into(), "x".into()]), Some(4));
        assert_eq!(locate(text, &["a".into(), "x".into()]), Some(2));
        assert_eq!(locate(text, &["c".into()]), None);
    }

    #[test]
    fn default_config_is_valid_for_every_command() {
        let cfg = ExperimentConfig::parse(DEFAULT_CONFIG).unwrap();
        for b in [
            Block::PwRate,
            Block::MagRate,
            Block::MagBvp,
            Block::FdLagrangian,
            Block::ScanBad,
            Block::LatticeSim,
            Block::LatticeCheck,
            Block::Verify,
        ] {
            cfg.validate_for(b, DEFAULT_CONFIG).unwrap();
        }
    }

    #[test]
    fn off_lattice_size_is_rejected() {
        let mut cfg = ExperimentConfig::parse(DEFAULT_CONFIG).unwrap();
        cfg.mag_rate.as_mut().unwrap().n = vec![7];
        let err = cfg.validate_for(Block::MagRate, DEFAULT_CONFIG).unwrap_err();
        assert_eq!(err.field, "mag_rate.n");
        assert!(err.line.is_some());
    }
}
