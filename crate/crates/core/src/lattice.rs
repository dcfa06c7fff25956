//! Spin-flip dynamics on the discrete torus `(Z / (2N+1)Z)^d`, `d ∈ {1, 2}`.
//!
//! Local functions are expanded in the product basis `H_A(σ) = Π_{i∈A} σ_i`
//! ([`CoefficientMap`]); translations act by `(τ_iσ)_j = σ_{i+j}`. The single
//! flip response operator [`apply_d`] maps `H_A` to `Σ_{r∈−A} (−2) H_{A+r}`,
//! so that `Σ_j [f(τ_j σ^k) − f(τ_j σ)] = (𝒟f)(τ_k σ)` where `σ^k` is `σ`
//! with site `k` flipped.
//!
//! Rates are translation invariant by construction: [`LocalRateSpec`] is a
//! table indexed by the spin pattern in a window around the flipped site.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::derive_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("dimension must be 1 or 2, got {0}")]
    InvalidDimension(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("invalid rate table: {0}")]
    InvalidRates(String),
    #[error("dependence set {set:?} does not fit in a torus of side {side}")]
    DependenceSetTooLarge { set: Vec<Offset>, side: usize },
    #[error("reference probability vanishes on a pattern")]
    EmptyCell,
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

/// Site offset `(x, y)`; the second coordinate is zero in one dimension.
pub type Offset = (i64, i64);

fn check_dim(dim: usize) -> Result<(), LatticeError> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(LatticeError::InvalidDimension(dim))
    }
}

/// Offsets of a `(2r+1)^d` window, `y` outer and `x` inner.
fn window_offsets(dim: usize, radius: usize) -> Vec<Offset> {
    let r = radius as i64;
    if dim == 1 {
        (-r..=r).map(|x| (x, 0)).collect()
    } else {
        (-r..=r).flat_map(|y| (-r..=r).map(move |x| (x, y))).collect()
    }
}

/// Offsets of the depth-`k` block anchored at the origin: `k` consecutive
/// sites in one dimension, a `k×k` square in two.
fn block_offsets(dim: usize, k: usize) -> Vec<Offset> {
    let k = k as i64;
    if dim == 1 {
        (0..k).map(|x| (x, 0)).collect()
    } else {
        (0..k).flat_map(|y| (0..k).map(move |x| (x, y))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinConfiguration {
    dim: usize,
    radius: usize,
    values: Vec<i8>,
}

impl SpinConfiguration {
    pub fn new(dim: usize, radius: usize, values: Vec<i8>) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        let side = 2 * radius + 1;
        if values.len() != side.pow(dim as u32) {
            return Err(LatticeError::InvalidConfiguration(format!(
                "expected {} values, got {}",
                side.pow(dim as u32),
                values.len()
            )));
        }
        if values.iter().any(|&v| v != 1 && v != -1) {
            return Err(LatticeError::InvalidConfiguration("spins must be ±1".into()));
        }
        Ok(Self { dim, radius, values })
    }

    pub fn constant(dim: usize, radius: usize, value: i8) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        Self::new(dim, radius, vec![value; (2 * radius + 1).pow(dim as u32)])
    }

    /// Independent spins with `P(σ_i = +1) = (1 + bias) / 2`.
    pub fn random_product<R: Rng + ?Sized>(dim: usize, radius: usize, bias: f64, rng: &mut R) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        let p = 0.5 * (1.0 + bias);
        let n = (2 * radius + 1).pow(dim as u32);
        Self::new(dim, radius, (0..n).map(|_| if rng.random::<f64>() < p { 1 } else { -1 }).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn num_sites(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn get(&self, site: usize) -> i8 {
        self.values[site]
    }

    pub fn flip(&mut self, site: usize) {
        self.values[site] = -self.values[site];
    }

    pub fn flipped(&self, site: usize) -> Self {
        let mut out = self.clone();
        out.flip(site);
        out
    }

    pub fn coords(&self, site: usize) -> Offset {
        let side = self.side();
        ((site % side) as i64, (site / side) as i64)
    }

    /// Index of `site + offset`, coordinate-wise modulo the side.
    pub fn shift(&self, site: usize, offset: Offset) -> usize {
        let side = self.side() as i64;
        let (x, y) = self.coords(site);
        let nx = (x + offset.0).rem_euclid(side);
        if self.dim == 1 {
            nx as usize
        } else {
            let ny = (y + offset.1).rem_euclid(side);
            (ny * side + nx) as usize
        }
    }

    pub fn magnetization(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.num_sites() as f64
    }

    /// One line per row, spins written as `1` / `-1`.
    pub fn to_text(&self) -> String {
        let side = self.side();
        let mut out = String::new();
        for row in self.values.chunks(side) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(dim: usize, text: &str) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        let rows: Vec<Vec<i8>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|tok| match tok {
                        "1" | "+1" | "+" => Ok(1),
                        "-1" | "-" => Ok(-1),
                        other => Err(LatticeError::InvalidConfiguration(format!("bad spin token {other:?}"))),
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        let side = rows.first().map_or(0, Vec::len);
        if side % 2 == 0 {
            return Err(LatticeError::InvalidConfiguration("side must be odd".into()));
        }
        let expected_rows = if dim == 1 { 1 } else { side };
        if rows.len() != expected_rows || rows.iter().any(|r| r.len() != side) {
            return Err(LatticeError::InvalidConfiguration("ragged or wrongly shaped rows".into()));
        }
        Self::new(dim, (side - 1) / 2, rows.concat())
    }

    /// Bit pattern of the spins at `site + offsets[p]`; bit `p` is set for `+1`.
    fn pattern(&self, site: usize, offsets: &[Offset]) -> usize {
        offsets
            .iter()
            .enumerate()
            .filter(|(_, &o)| self.values[self.shift(site, o)] == 1)
            .fold(0, |acc, (p, _)| acc | (1 << p))
    }
}

/// Local function `f = Σ_A α_A H_A` with finitely many nonzero coefficients.
/// Sets are sorted, duplicate-free offset lists; the empty set is the
/// constant function.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoefficientMap {
    terms: BTreeMap<Vec<Offset>, f64>,
}

fn canonical_set(mut set: Vec<Offset>) -> Vec<Offset> {
    set.sort_unstable();
    set.dedup();
    set
}

impl CoefficientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(value: f64) -> Self {
        let mut out = Self::new();
        out.add_term(Vec::new(), value);
        out
    }

    pub fn basis(set: Vec<Offset>, coefficient: f64) -> Self {
        let mut out = Self::new();
        out.add_term(set, coefficient);
        out
    }

    /// Adds `coefficient · H_set`, merging with an existing entry and
    /// dropping it if the result is zero. Repeated offsets collapse, so the
    /// set is treated as a set.
    pub fn add_term(&mut self, set: Vec<Offset>, coefficient: f64) {
        let key = canonical_set(set);
        let entry = self.terms.entry(key.clone()).or_insert(0.0);
        *entry += coefficient;
        if *entry == 0.0 {
            self.terms.remove(&key);
        }
    }

    pub fn get(&self, set: &[Offset]) -> f64 {
        self.terms.get(&canonical_set(set.to_vec())).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<Offset>, f64)> {
        self.terms.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = Self::new();
        for (set, c) in self.iter() {
            out.add_term(set.clone(), a * c);
        }
        out
    }

    pub fn plus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (set, c) in other.iter() {
            out.add_term(set.clone(), c);
        }
        out
    }

    /// Largest coordinate extent `max − min + 1` over all stored sets.
    pub fn extent(&self) -> usize {
        self.terms
            .keys()
            .filter(|s| !s.is_empty())
            .map(|s| {
                let ext = |proj: fn(&Offset) -> i64| {
                    let lo = s.iter().map(proj).min().unwrap_or(0);
                    let hi = s.iter().map(proj).max().unwrap_or(0);
                    (hi - lo + 1) as usize
                };
                ext(|o| o.0).max(ext(|o| o.1))
            })
            .max()
            .unwrap_or(0)
    }

    /// Fails when a dependence set is too wide for the torus of `config`.
    pub fn check_fits(&self, config: &SpinConfiguration) -> Result<(), LatticeError> {
        let side = config.side();
        for set in self.terms.keys() {
            let too_wide = |proj: fn(&Offset) -> i64| {
                let lo = set.iter().map(proj).min().unwrap_or(0);
                let hi = set.iter().map(proj).max().unwrap_or(0);
                (hi - lo) as usize >= side
            };
            if too_wide(|o| o.0) || too_wide(|o| o.1) || (config.dim() == 1 && set.iter().any(|o| o.1 != 0)) {
                return Err(LatticeError::DependenceSetTooLarge { set: set.clone(), side });
            }
        }
        Ok(())
    }

    /// `f(τ_site σ)`.
    pub fn eval_at(&self, config: &SpinConfiguration, site: usize) -> f64 {
        self.iter()
            .map(|(set, c)| {
                let sign: i8 = set.iter().map(|&o| config.get(config.shift(site, o))).product();
                c * sign as f64
            })
            .sum()
    }

    /// Random map with up to `max_sets` sets of size `1..=max_size`, offsets
    /// in `[−max_offset, max_offset]^d` and coefficients uniform in
    /// `[−scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        dim: usize,
        max_sets: usize,
        max_size: usize,
        max_offset: i64,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut out = Self::new();
        let sets = rng.random_range(1..=max_sets);
        for _ in 0..sets {
            let size = rng.random_range(1..=max_size);
            let set: Vec<Offset> = (0..size)
                .map(|_| {
                    let x = rng.random_range(-max_offset..=max_offset);
                    let y = if dim == 2 { rng.random_range(-max_offset..=max_offset) } else { 0 };
                    (x, y)
                })
                .collect();
            out.add_term(set, rng.random_range(-scale..=scale));
        }
        out
    }
}

/// Where `𝒟` acts: on a torus of radius `N` (offsets reduced into
/// `[−N, N]`) or in infinite volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TorusContext {
    Finite(usize),
    Infinite,
}

/// `𝒟`: constants vanish, `H_A ↦ Σ_{r∈−A} (−2) H_{A+r}`, extended linearly.
pub fn apply_d(f: &CoefficientMap, context: TorusContext) -> CoefficientMap {
    let reduce = |v: i64| -> i64 {
        match context {
            TorusContext::Infinite => v,
            TorusContext::Finite(n) => {
                let side = (2 * n + 1) as i64;
                (v + n as i64).rem_euclid(side) - n as i64
            }
        }
    };
    let mut out = CoefficientMap::new();
    for (set, c) in f.iter() {
        for &a in set {
            let translated: Vec<Offset> = set.iter().map(|&b| (reduce(b.0 - a.0), reduce(b.1 - a.1))).collect();
            out.add_term(translated, -2.0 * c);
        }
    }
    out
}

/// `⟨f, ℒ_N(σ)⟩ = |T_N|^{−1} Σ_i f(τ_i σ)`.
pub fn empirical_average(f: &CoefficientMap, config: &SpinConfiguration) -> Result<f64, LatticeError> {
    f.check_fits(config)?;
    let n = config.num_sites();
    Ok((0..n).map(|i| f.eval_at(config, i)).sum::<f64>() / n as f64)
}

/// Translation-invariant flip rates `c(τ_kσ)` given by a table over the
/// spin pattern in the `(2r+1)^d` window around the flipped site.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRateSpec {
    dim: usize,
    radius: usize,
    table: Vec<f64>,
}

/// Largest supported window, in sites.
pub const MAX_WINDOW_SITES: usize = 16;

impl LocalRateSpec {
    pub fn new(dim: usize, radius: usize, table: Vec<f64>) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        let sites = (2 * radius + 1).pow(dim as u32);
        if sites > MAX_WINDOW_SITES {
            return Err(LatticeError::InvalidRates(format!("window of {sites} sites exceeds {MAX_WINDOW_SITES}")));
        }
        if table.len() != 1 << sites {
            return Err(LatticeError::InvalidRates(format!(
                "expected {} entries, got {}",
                1usize << sites,
                table.len()
            )));
        }
        if let Some(bad) = table.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            return Err(LatticeError::InvalidRates(format!("rate {bad} is not strictly positive")));
        }
        Ok(Self { dim, radius, table })
    }

    /// Independent flips at a constant rate.
    pub fn constant(dim: usize, rate: f64) -> Result<Self, LatticeError> {
        Self::new(dim, 0, vec![rate; 2])
    }

    pub fn from_fn(dim: usize, radius: usize, rate: impl Fn(&[i8]) -> f64) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        let sites = (2 * radius + 1).pow(dim as u32);
        if sites > MAX_WINDOW_SITES {
            return Err(LatticeError::InvalidRates(format!("window of {sites} sites exceeds {MAX_WINDOW_SITES}")));
        }
        let table = (0..1usize << sites)
            .map(|bits| {
                let spins: Vec<i8> = (0..sites).map(|p| if bits >> p & 1 == 1 { 1 } else { -1 }).collect();
                rate(&spins)
            })
            .collect();
        Self::new(dim, radius, table)
    }

    /// Rates drawn uniformly from `[lo, hi]` independently per pattern.
    pub fn random<R: Rng + ?Sized>(dim: usize, radius: usize, lo: f64, hi: f64, rng: &mut R) -> Result<Self, LatticeError> {
        check_dim(dim)?;
        let sites = (2 * radius + 1).pow(dim as u32);
        if sites > MAX_WINDOW_SITES {
            return Err(LatticeError::InvalidRates(format!("window of {sites} sites exceeds {MAX_WINDOW_SITES}")));
        }
        Self::new(dim, radius, (0..1usize << sites).map(|_| rng.random_range(lo..=hi)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn window(&self) -> Vec<Offset> {
        window_offsets(self.dim, self.radius)
    }

    /// `c(τ_site σ)`.
    pub fn rate_at(&self, config: &SpinConfiguration, site: usize) -> f64 {
        self.table[config.pattern(site, &self.window())]
    }

    /// JSON object mapping pattern strings (`+`/`-` in window order) to
    /// rates.
    pub fn to_json(&self) -> String {
        let sites = self.window().len();
        let map: BTreeMap<String, f64> = self
            .table
            .iter()
            .enumerate()
            .map(|(bits, &c)| (pattern_string(bits, sites), c))
            .collect();
        serde_json::json!({ "dim": self.dim, "radius": self.radius, "rates": map }).to_string()
    }

    pub fn from_json(text: &str) -> Result<Self, LatticeError> {
        #[derive(Deserialize)]
        struct Raw {
            dim: usize,
            radius: usize,
            rates: BTreeMap<String, f64>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| LatticeError::InvalidRates(e.to_string()))?;
        check_dim(raw.dim)?;
        let sites = (2 * raw.radius + 1).pow(raw.dim as u32);
        if sites > MAX_WINDOW_SITES {
            return Err(LatticeError::InvalidRates(format!("window of {sites} sites exceeds {MAX_WINDOW_SITES}")));
        }
        let mut table = vec![f64::NAN; 1 << sites];
        for (key, rate) in raw.rates {
            if key.len() != sites || key.chars().any(|ch| ch != '+' && ch != '-') {
                return Err(LatticeError::InvalidRates(format!("bad pattern {key:?}")));
            }
            let bits = key.chars().enumerate().filter(|(_, ch)| *ch == '+').fold(0, |acc, (p, _)| acc | (1 << p));
            table[bits] = rate;
        }
        if let Some(bits) = table.iter().position(|c| c.is_nan()) {
            return Err(LatticeError::InvalidRates(format!("missing pattern {}", pattern_string(bits, sites))));
        }
        Self::new(raw.dim, raw.radius, table)
    }
}

fn pattern_string(bits: usize, sites: usize) -> String {
    (0..sites).map(|p| if bits >> p & 1 == 1 { '+' } else { '-' }).collect()
}

/// Binary sum tree over per-site rates; sums are recomputed from children
/// on every update so the total never drifts.
struct RateTree {
    size: usize,
    nodes: Vec<f64>,
}

impl RateTree {
    fn new(rates: &[f64]) -> Self {
        let size = rates.len().next_power_of_two();
        let mut nodes = vec![0.0; 2 * size];
        nodes[size..size + rates.len()].copy_from_slice(rates);
        for i in (1..size).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        Self { size, nodes }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, leaf: usize, rate: f64) {
        let mut i = self.size + leaf;
        self.nodes[i] = rate;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `u ∈ [0, total)`.
    fn find(&self, mut u: f64) -> usize {
        let mut i = 1;
        while i < self.size {
            let left = self.nodes[2 * i];
            if u < left || self.nodes[2 * i + 1] == 0.0 {
                i *= 2;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        i - self.size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlipEvent {
    pub time: f64,
    pub site: usize,
    pub new_value: i8,
}

pub const EVENT_CSV_HEADER: &str = "time,site,new_value";

#[derive(Debug, Clone, PartialEq)]
pub struct GlauberRun {
    pub config: SpinConfiguration,
    pub events: Vec<FlipEvent>,
    /// Configurations at the requested observation times, in order.
    pub snapshots: Vec<(f64, SpinConfiguration)>,
}

impl GlauberRun {
    pub fn events_csv(&self) -> String {
        let mut out = String::from(EVENT_CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            let _ = writeln!(out, "{},{},{}", e.time, e.site, e.new_value);
        }
        out
    }
}

/// Exact event-driven simulation up to `horizon`, without observations.
pub fn glauber_simulate(
    config: &SpinConfiguration,
    rates: &LocalRateSpec,
    horizon: f64,
    seed: u64,
) -> Result<GlauberRun, LatticeError> {
    glauber_simulate_observed(config, rates, horizon, &[], true, seed)
}

/// Exact simulation recording snapshots at `observation_times` (sorted,
/// within `[0, horizon]`). The event log is kept only if `record_events`.
pub fn glauber_simulate_observed(
    config: &SpinConfiguration,
    rates: &LocalRateSpec,
    horizon: f64,
    observation_times: &[f64],
    record_events: bool,
    seed: u64,
) -> Result<GlauberRun, LatticeError> {
    if rates.dim() != config.dim() {
        return Err(LatticeError::Mismatch("rate table and configuration dimensions differ".into()));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(LatticeError::InvalidConfiguration(format!("horizon {horizon} must be finite and ≥ 0")));
    }
    if observation_times.windows(2).any(|w| w[1] < w[0])
        || observation_times.iter().any(|&t| !(0.0..=horizon).contains(&t))
    {
        return Err(LatticeError::InvalidConfiguration("observation times must be sorted within [0, horizon]".into()));
    }
    let mut sigma = config.clone();
    let window = rates.window();
    let n = sigma.num_sites();
    let initial: Vec<f64> = (0..n).map(|k| rates.table[sigma.pattern(k, &window)]).collect();
    let mut tree = RateTree::new(&initial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(observation_times.len());
    let mut next_obs = 0;
    let mut t = 0.0;
    loop {
        let total = tree.total();
        let hold = Exp::new(total).expect("total rate is positive").sample(&mut rng);
        let t_next = t + hold;
        while next_obs < observation_times.len() && observation_times[next_obs] < t_next {
            snapshots.push((observation_times[next_obs], sigma.clone()));
            next_obs += 1;
        }
        if t_next > horizon {
            break;
        }
        t = t_next;
        let site = tree.find(rng.random::<f64>() * total).min(n - 1);
        sigma.flip(site);
        if record_events {
            events.push(FlipEvent {
                time: t,
                site,
                new_value: sigma.get(site),
            });
        }
        // Only sites whose window contains `site` change rate.
        for &w in &window {
            let k = sigma.shift(site, (-w.0, -w.1));
            tree.set(k, rates.table[sigma.pattern(k, &window)]);
        }
    }
    Ok(GlauberRun {
        config: sigma,
        events,
        snapshots,
    })
}

/// `⟨f, ℒ_N(σ(t))⟩` at each observation time for `replicas` independent
/// runs; run `r` uses `derive_seed(master_seed, r)`. Rows are replicas in
/// index order, columns are `(time, observable)` pairs time-major.
pub fn moment_replicas(
    config: &SpinConfiguration,
    rates: &LocalRateSpec,
    times: &[f64],
    observables: &[CoefficientMap],
    replicas: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>, LatticeError> {
    for f in observables {
        f.check_fits(config)?;
    }
    let horizon = times.iter().copied().fold(0.0, f64::max);
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let run = glauber_simulate_observed(config, rates, horizon, times, false, derive_seed(master_seed, r as u64))?;
            let mut row = Vec::with_capacity(times.len() * observables.len());
            for (_, snap) in &run.snapshots {
                for f in observables {
                    row.push(empirical_average(f, snap)?);
                }
            }
            Ok(row)
        })
        .collect()
}

/// Both sides of the exact identity
/// `|T|^{−1} e^{−F} L_N e^{F} = ⟨c(e^{𝒟f} − 1), ℒ_N⟩` with `F = |T|⟨f, ℒ_N⟩`.
///
/// The left side enumerates every flip `k` and evaluates
/// `F(σ^k) − F(σ)` as a site-by-site sum of differences; the right side
/// evaluates the local function `𝒟f` from [`apply_d`].
pub fn nonlinear_generator_exact(
    config: &SpinConfiguration,
    f: &CoefficientMap,
    rates: &LocalRateSpec,
) -> Result<(f64, f64), LatticeError> {
    if rates.dim() != config.dim() {
        return Err(LatticeError::Mismatch("rate table and configuration dimensions differ".into()));
    }
    f.check_fits(config)?;
    let n = config.num_sites();
    let base: Vec<f64> = (0..n).map(|j| f.eval_at(config, j)).collect();
    let mut lhs = 0.0;
    for k in 0..n {
        let flipped = config.flipped(k);
        let delta: f64 = (0..n).map(|j| f.eval_at(&flipped, j) - base[j]).sum();
        lhs += rates.rate_at(config, k) * delta.exp_m1();
    }
    lhs /= n as f64;

    let df = apply_d(f, TorusContext::Finite(config.radius()));
    df.check_fits(config)?;
    let rhs = (0..n)
        .map(|k| rates.rate_at(config, k) * df.eval_at(config, k).exp_m1())
        .sum::<f64>()
        / n as f64;
    Ok((lhs, rhs))
}

/// Finite-volume value `|T|^{−1} e^{−|T|Ψ(x)} L_N e^{|T|Ψ(x)}` with
/// `x_i = ⟨f_i, ℒ_N⟩`, and its large-volume limit
/// `⟨c(e^{Σ_i ∂_iΨ(x) 𝒟f_i} − 1), ℒ_N⟩`.
pub fn nonlinear_generator_general(
    config: &SpinConfiguration,
    psi: &dyn Fn(&[f64]) -> f64,
    grad_psi: &dyn Fn(&[f64]) -> Vec<f64>,
    fs: &[CoefficientMap],
    rates: &LocalRateSpec,
) -> Result<(f64, f64), LatticeError> {
    if rates.dim() != config.dim() {
        return Err(LatticeError::Mismatch("rate table and configuration dimensions differ".into()));
    }
    let n = config.num_sites();
    let size = n as f64;
    let x: Vec<f64> = fs.iter().map(|f| empirical_average(f, config)).collect::<Result<_, _>>()?;
    let psi0 = psi(&x);
    let mut finite = 0.0;
    for k in 0..n {
        let flipped = config.flipped(k);
        let xk: Vec<f64> = fs.iter().map(|f| empirical_average(f, &flipped)).collect::<Result<_, _>>()?;
        finite += rates.rate_at(config, k) * (size * (psi(&xk) - psi0)).exp_m1();
    }
    finite /= size;

    let grad = grad_psi(&x);
    let mut tilt = CoefficientMap::new();
    for (f, g) in fs.iter().zip(&grad) {
        tilt = tilt.plus(&apply_d(f, TorusContext::Finite(config.radius())).scaled(*g));
    }
    tilt.check_fits(config)?;
    let limit = (0..n)
        .map(|k| rates.rate_at(config, k) * tilt.eval_at(config, k).exp_m1())
        .sum::<f64>()
        / size;
    Ok((finite, limit))
}

/// Pattern counts of the depth-`k` block over all translates of one or
/// more configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EmpiricalStats {
    dim: usize,
    depth: usize,
    counts: Vec<u64>,
    total: u64,
}

impl EmpiricalStats {
    pub fn from_config(config: &SpinConfiguration, depth: usize) -> Result<Self, LatticeError> {
        let block = block_offsets(config.dim(), depth);
        if depth == 0 || block.len() > MAX_WINDOW_SITES || depth > config.side() {
            return Err(LatticeError::InvalidConfiguration(format!("depth {depth} unsupported for this torus")));
        }
        let mut counts = vec![0u64; 1 << block.len()];
        for i in 0..config.num_sites() {
            counts[config.pattern(i, &block)] += 1;
        }
        Ok(Self {
            dim: config.dim(),
            depth,
            counts,
            total: config.num_sites() as u64,
        })
    }

    /// Sums counts; the result does not depend on merge order.
    pub fn merge(&self, other: &Self) -> Result<Self, LatticeError> {
        if self.dim != other.dim || self.depth != other.depth {
            return Err(LatticeError::Mismatch("statistics of different shape".into()));
        }
        Ok(Self {
            dim: self.dim,
            depth: self.depth,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            total: self.total + other.total,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn block_sites(&self) -> usize {
        block_offsets(self.dim, self.depth).len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

/// Block relative entropy per site of the empirical pattern frequencies
/// with respect to the product measure with mean spin `y`.
pub fn relative_entropy_density_estimate(sample: &EmpiricalStats, y: f64) -> Result<f64, LatticeError> {
    if !(y.abs() < 1.0) {
        return Err(LatticeError::EmptyCell);
    }
    let sites = sample.block_sites();
    let (lp, lm) = ((0.5 * (1.0 + y)).ln(), (0.5 * (1.0 - y)).ln());
    let total = sample.total as f64;
    let mut s = 0.0;
    for (bits, &count) in sample.counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let plus = (bits as u64).count_ones() as f64;
        let log_ref = plus * lp + (sites as f64 - plus) * lm;
        let p = count as f64 / total;
        s += p * (p.ln() - log_ref);
    }
    Ok(s / sites as f64)
}

/// Estimate from the pooled sample plus a bootstrap standard error over
/// configurations.
pub fn relative_entropy_bootstrap(
    samples: &[EmpiricalStats],
    y: f64,
    resamples: usize,
    seed: u64,
) -> Result<(f64, f64), LatticeError> {
    let Some(first) = samples.first() else {
        return Err(LatticeError::InvalidConfiguration("no samples".into()));
    };
    let pool = |pick: &mut dyn FnMut() -> usize| -> Result<EmpiricalStats, LatticeError> {
        let mut acc = samples[pick()].clone();
        for _ in 1..samples.len() {
            acc = acc.merge(&samples[pick()])?;
        }
        Ok(acc)
    };
    let mut all = first.clone();
    for s in &samples[1..] {
        all = all.merge(s)?;
    }
    let estimate = relative_entropy_density_estimate(&all, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let stats = pool(&mut || rng.random_range(0..samples.len()))?;
        values.push(relative_entropy_density_estimate(&stats, y)?);
    }
    let mean = values.iter().sum::<f64>() / resamples.max(1) as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples.max(2) - 1) as f64;
    Ok((estimate, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(set: &[Offset]) -> CoefficientMap {
        CoefficientMap::basis(set.to_vec(), 1.0)
    }

    #[test]
    fn d_on_basis_examples() {
        assert!(apply_d(&CoefficientMap::constant(3.0), TorusContext::Infinite).is_empty());
        let d0 = apply_d(&h(&[(0, 0)]), TorusContext::Infinite);
        assert_eq!(d0, CoefficientMap::basis(vec![(0, 0)], -2.0));
        let dpair = apply_d(&h(&[(0, 0), (1, 0)]), TorusContext::Infinite);
        assert_eq!(dpair.len(), 2);
        assert_eq!(dpair.get(&[(0, 0), (1, 0)]), -2.0);
        assert_eq!(dpair.get(&[(-1, 0), (0, 0)]), -2.0);
    }

    #[test]
    fn zero_coefficients_are_dropped() {
        let mut f = h(&[(0, 0)]);
        f.add_term(vec![(0, 0)], -1.0);
        assert!(f.is_empty());
        // Repeated offsets collapse to a set.
        assert_eq!(CoefficientMap::basis(vec![(1, 0), (1, 0), (0, 0)], 1.0).get(&[(0, 0), (1, 0)]), 1.0);
    }

    #[test]
    fn finite_reduction_wraps_offsets() {
        let f = h(&[(-2, 0), (2, 0)]);
        let df = apply_d(&f, TorusContext::Finite(2));
        // On side 5, {−2, 2} − 2 = {−4, 0} ≡ {1, 0}.
        assert_eq!(df.get(&[(0, 0), (1, 0)]), -2.0);
        assert_eq!(df.get(&[(-1, 0), (0, 0)]), -2.0);
    }

    #[test]
    fn empirical_average_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = SpinConfiguration::random_product(1, 5, 0.2, &mut rng).unwrap();
        assert_eq!(empirical_average(&CoefficientMap::constant(1.0), &cfg).unwrap(), 1.0);
        assert!((empirical_average(&h(&[(0, 0)]), &cfg).unwrap() - cfg.magnetization()).abs() < 1e-15);
        assert!(matches!(
            empirical_average(&h(&[(0, 0), (11, 0)]), &cfg),
            Err(LatticeError::DependenceSetTooLarge { .. })
        ));
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for dim in [1, 2] {
            let cfg = SpinConfiguration::random_product(dim, 3, 0.0, &mut rng).unwrap();
            assert_eq!(SpinConfiguration::from_text(dim, &cfg.to_text()).unwrap(), cfg);
        }
        assert!(SpinConfiguration::from_text(1, "1 -1\n").is_err());
        assert!(SpinConfiguration::from_text(1, "1 0 1\n").is_err());
    }

    #[test]
    fn rate_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LocalRateSpec::random(1, 1, 0.2, 5.0, &mut rng).unwrap();
        assert_eq!(LocalRateSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(LocalRateSpec::from_json(r#"{"dim":1,"radius":0,"rates":{"+":1.0}}"#).is_err());
        assert!(LocalRateSpec::from_json(r#"{"dim":1,"radius":0,"rates":{"+":1.0,"-":0.0}}"#).is_err());
    }

    #[test]
    fn rate_lookup_is_translation_invariant() {
        // Rate depends on the right neighbour only.
        let spec = LocalRateSpec::from_fn(1, 1, |w| if w[2] == 1 { 2.0 } else { 0.5 }).unwrap();
        let cfg = SpinConfiguration::new(1, 2, vec![1, -1, -1, 1, 1]).unwrap();
        let rates: Vec<f64> = (0..5).map(|k| spec.rate_at(&cfg, k)).collect();
        assert_eq!(rates, vec![0.5, 0.5, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn zero_horizon_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SpinConfiguration::random_product(2, 3, 0.0, &mut rng).unwrap();
        let run = glauber_simulate(&cfg, &LocalRateSpec::constant(2, 1.0).unwrap(), 0.0, 9).unwrap();
        assert_eq!(run.config, cfg);
        assert!(run.events.is_empty());
    }

    #[test]
    fn event_log_replays_to_final_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SpinConfiguration::random_product(1, 10, 0.0, &mut rng).unwrap();
        let spec = LocalRateSpec::random(1, 1, 0.2, 5.0, &mut rng).unwrap();
        let run = glauber_simulate(&cfg, &spec, 2.0, 11).unwrap();
        let mut replay = cfg.clone();
        for e in &run.events {
            replay.flip(e.site);
            assert_eq!(replay.get(e.site), e.new_value);
        }
        assert_eq!(replay, run.config);
        assert!(run.events.windows(2).all(|w| w[0].time < w[1].time));
        assert_eq!(run, glauber_simulate(&cfg, &spec, 2.0, 11).unwrap());
    }

    #[test]
    fn sum_tree_tracks_total() {
        let mut tree = RateTree::new(&[1.0, 2.0, 3.0]);
        assert_eq!(tree.total(), 6.0);
        tree.set(1, 0.5);
        assert_eq!(tree.total(), 4.5);
        assert_eq!(tree.find(0.9), 0);
        assert_eq!(tree.find(1.2), 1);
        assert_eq!(tree.find(4.4), 2);
    }

    #[test]
    fn generator_identity_single_spin() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = SpinConfiguration::random_product(1, 10, 0.3, &mut rng).unwrap();
        let unit = LocalRateSpec::constant(1, 1.0).unwrap();
        let (l0, r0) = nonlinear_generator_exact(&cfg, &CoefficientMap::new(), &unit).unwrap();
        assert_eq!((l0, r0), (0.0, 0.0));
        let lambda = 0.7;
        let (lhs, rhs) = nonlinear_generator_exact(&cfg, &CoefficientMap::basis(vec![(0, 0)], lambda), &unit).unwrap();
        let m = cfg.magnetization();
        let expected = 0.5 * (1.0 + m) * (-2.0 * lambda).exp_m1() + 0.5 * (1.0 - m) * (2.0 * lambda).exp_m1();
        assert!((rhs - expected).abs() < 1e-13);
        assert!((lhs - rhs).abs() < 1e-13);
    }

    #[test]
    fn linear_psi_reduces_to_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SpinConfiguration::random_product(1, 8, 0.0, &mut rng).unwrap();
        let spec = LocalRateSpec::random(1, 1, 0.2, 5.0, &mut rng).unwrap();
        let fs = vec![h(&[(0, 0)]), h(&[(0, 0), (1, 0)])];
        let (finite, limit) = nonlinear_generator_general(
            &cfg,
            &|x: &[f64]| 0.3 * x[0] - 0.2 * x[1],
            &|_: &[f64]| vec![0.3, -0.2],
            &fs,
            &spec,
        )
        .unwrap();
        assert!((finite - limit).abs() < 1e-12);
    }

    #[test]
    fn frequencies_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = SpinConfiguration::random_product(2, 4, 0.1, &mut rng).unwrap();
        let stats = EmpiricalStats::from_config(&cfg, 2).unwrap();
        assert_eq!(stats.counts().iter().sum::<u64>(), stats.total());
        assert!((stats.frequencies().iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(stats.counts().len(), 16);
    }

    #[test]
    fn entropy_of_reference_sample_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = SpinConfiguration::constant(1, 5, 1).unwrap();
        let stats = EmpiricalStats::from_config(&cfg, 1).unwrap();
        // All-plus sample against y: entropy is −log((1+y)/2).
        let s = relative_entropy_density_estimate(&stats, 0.2).unwrap();
        assert!((s + 0.6f64.ln()).abs() < 1e-15);
        assert_eq!(relative_entropy_density_estimate(&stats, 1.0), Err(LatticeError::EmptyCell));
        let big = SpinConfiguration::random_product(1, 20_000, -0.4, &mut rng).unwrap();
        let s = relative_entropy_density_estimate(&EmpiricalStats::from_config(&big, 2).unwrap(), -0.4).unwrap();
        assert!(s.abs() < 1e-3);
    }
}
