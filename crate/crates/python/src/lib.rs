//! Python module `spinflip`.
//!
//! Thin wrappers: closed forms and oracles as functions, models and
//! configurations as classes. Every library error becomes `ValueError`
//! carrying the error's message.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spinflip_ldp::badness::{is_bad, optimal_initials, BadnessOptions, RateFunctionSpec};
use spinflip_ldp::finite_jump::{fj_lagrangian_dual, fj_lagrangian_variational, fj_paper_closed_form};
use spinflip_ldp::lattice::{self, CoefficientMap, LocalRateSpec, Offset};
use spinflip_ldp::magnetization::{self as mag, MagnetizationLagrangian};
use spinflip_ldp::poisson_walk::{self as pw, PoissonWalkParams};
use spinflip_ldp::trajectory::{
    euler_lagrange_residual, minimize_action_fixed, ActionSolver, InitialCost, OpenStartOptions,
};
use spinflip_ldp::verify::{run_all, run_check, VerifyConfig};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyfunction]
fn mag_hamiltonian(m: f64, p: f64) -> f64 {
    mag::mag_hamiltonian(m, p)
}

#[pyfunction]
fn mag_lagrangian(m: f64, q: f64) -> f64 {
    mag::mag_lagrangian(m, q)
}

/// `(C1, C2)` of the extremal `C1 e^{2t} + C2 e^{-2t}`.
#[pyfunction]
fn mag_extremal(m0: f64, m_end: f64, horizon: f64) -> PyResult<(f64, f64)> {
    let e = mag::mag_extremal(m0, m_end, horizon).map_err(value_err)?;
    Ok((e.c1, e.c2))
}

#[pyfunction]
fn mag_exact_log_prob(n: u64, m0: f64, horizon: f64, m_end: f64) -> PyResult<f64> {
    mag::mag_exact_log_prob(n, m0, horizon, m_end).map_err(value_err)
}

#[pyfunction]
fn mag_constrained_pressure(lam: f64, m: f64, t: f64) -> f64 {
    mag::mag_constrained_pressure(lam, m, t)
}

#[pyfunction]
fn pw_lagrangian(a: f64, b: f64, d: f64) -> PyResult<f64> {
    let p = PoissonWalkParams::new(b, d, 1).map_err(value_err)?;
    Ok(pw::pw_lagrangian(a, &p))
}

#[pyfunction]
fn pw_exact_log_prob(b: f64, d: f64, n: u64, t: f64, k: i64) -> PyResult<f64> {
    let p = PoissonWalkParams::new(b, d, n).map_err(value_err)?;
    pw::pw_exact_log_prob(&p, t, k).map_err(value_err)
}

/// Direct minimizer of the magnetization action with pinned ends.
/// Returns `(path values, action, Euler-Lagrange residual)`.
#[pyfunction]
#[pyo3(signature = (m0, m_end, horizon, steps=400))]
fn minimize_action(m0: f64, m_end: f64, horizon: f64, steps: usize) -> PyResult<(Vec<f64>, f64, f64)> {
    let opts = ActionSolver {
        steps,
        ..ActionSolver::default()
    };
    let sol = minimize_action_fixed(&MagnetizationLagrangian, m0, m_end, horizon, &opts).map_err(value_err)?;
    let el = euler_lagrange_residual(&MagnetizationLagrangian, &sol.path);
    Ok((sol.path.values().to_vec(), sol.value, el))
}

#[pyclass(name = "JumpModel", frozen)]
struct PyJumpModel(spinflip_ldp::finite_jump::JumpModel);

#[pymethods]
impl PyJumpModel {
    #[new]
    fn new(d: Vec<Vec<f64>>, c: Vec<f64>, mu: Vec<f64>) -> PyResult<Self> {
        spinflip_ldp::finite_jump::JumpModel::from_rows(&d, c, mu)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn spin_flip(y: f64) -> PyResult<Self> {
        spinflip_ldp::finite_jump::JumpModel::spin_flip(y)
            .map(Self)
            .map_err(value_err)
    }

    fn variational(&self, alpha: Vec<f64>) -> PyResult<f64> {
        fj_lagrangian_variational(&self.0, &alpha).map_err(value_err)
    }

    /// `(value, nu)` of the dual problem.
    fn dual(&self, alpha: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let d = fj_lagrangian_dual(&self.0, &alpha).map_err(value_err)?;
        Ok((d.value, d.nu))
    }

    fn closed_form(&self, alpha: Vec<f64>) -> PyResult<f64> {
        fj_paper_closed_form(&self.0, &alpha).map_err(value_err)
    }
}

#[pyclass(name = "RateFunction", frozen)]
struct PyRateFunction(RateFunctionSpec);

#[pymethods]
impl PyRateFunction {
    #[staticmethod]
    fn bernoulli(y: f64) -> PyResult<Self> {
        RateFunctionSpec::bernoulli(y).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn double_well(beta: f64) -> PyResult<Self> {
        RateFunctionSpec::double_well(beta).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn tabulated(m: Vec<f64>, values: Vec<f64>) -> PyResult<Self> {
        RateFunctionSpec::tabulated(m, values).map(Self).map_err(value_err)
    }

    fn __call__(&self, x: f64) -> f64 {
        self.0.value(x)
    }

    fn wells(&self) -> Vec<f64> {
        self.0.wells().to_vec()
    }

    /// Optimal starting points `(gamma0, total cost)` for ending at `m_end`.
    fn optimal_initials(&self, m_end: f64, horizon: f64) -> PyResult<Vec<(f64, f64)>> {
        let sol = optimal_initials(&MagnetizationLagrangian, &self.0, m_end, horizon, &OpenStartOptions::default())
            .map_err(value_err)?;
        Ok(sol.minimizers.iter().map(|m| (m.gamma0, m.total_cost)).collect())
    }

    fn is_bad(&self, m_end: f64, horizon: f64) -> PyResult<bool> {
        is_bad(&MagnetizationLagrangian, &self.0, m_end, horizon, &BadnessOptions::default())
            .map(|d| d.bad)
            .map_err(value_err)
    }
}

#[pyclass(name = "SpinConfiguration", frozen)]
struct PySpinConfiguration(lattice::SpinConfiguration);

#[pymethods]
impl PySpinConfiguration {
    #[staticmethod]
    fn constant(dim: usize, radius: usize, value: i8) -> PyResult<Self> {
        lattice::SpinConfiguration::constant(dim, radius, value)
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn random(dim: usize, radius: usize, bias: f64, seed: u64) -> PyResult<Self> {
        lattice::SpinConfiguration::random_product(dim, radius, bias, &mut ChaCha8Rng::seed_from_u64(seed))
            .map(Self)
            .map_err(value_err)
    }

    #[getter]
    fn side(&self) -> usize {
        self.0.side()
    }

    fn values(&self) -> Vec<i8> {
        self.0.values().to_vec()
    }

    fn magnetization(&self) -> f64 {
        self.0.magnetization()
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }
}

#[pyclass(name = "RateTable", frozen)]
struct PyRateTable(LocalRateSpec);

#[pymethods]
impl PyRateTable {
    #[staticmethod]
    fn constant(dim: usize, rate: f64) -> PyResult<Self> {
        LocalRateSpec::constant(dim, rate).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn random(dim: usize, radius: usize, lo: f64, hi: f64, seed: u64) -> PyResult<Self> {
        LocalRateSpec::random(dim, radius, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
            .map(Self)
            .map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        LocalRateSpec::from_json(text).map(Self).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }
}

fn coefficient_map(terms: Vec<(Vec<Offset>, f64)>) -> CoefficientMap {
    let mut f = CoefficientMap::new();
    for (set, c) in terms {
        f.add_term(set, c);
    }
    f
}

/// `(lhs, rhs)` of the exact non-linear generator identity for
/// `f = Σ c_A H_A` given as `[(offsets, c_A), ...]`.
#[pyfunction]
fn nonlinear_generator_exact(
    config: &PySpinConfiguration,
    f: Vec<(Vec<Offset>, f64)>,
    rates: &PyRateTable,
) -> PyResult<(f64, f64)> {
    lattice::nonlinear_generator_exact(&config.0, &coefficient_map(f), &rates.0).map_err(value_err)
}

/// Moment series `⟨H_A, L_N(σ(t))⟩`; one row per replica, columns
/// time-major then observable.
#[pyfunction]
fn glauber_moments(
    config: &PySpinConfiguration,
    rates: &PyRateTable,
    times: Vec<f64>,
    observables: Vec<Vec<Offset>>,
    replicas: usize,
    seed: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let obs: Vec<CoefficientMap> = observables.into_iter().map(|s| CoefficientMap::basis(s, 1.0)).collect();
    lattice::moment_replicas(&config.0, &rates.0, &times, &obs, replicas, seed).map_err(value_err)
}

/// Runs one check (or all when `check` is None) of the property suite at
/// reference settings; returns `(id, name, passed, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (check=None, seed=20240607))]
fn verify(py: Python<'_>, check: Option<u32>, seed: u64) -> PyResult<Vec<(u32, String, bool, String)>> {
    let cfg = VerifyConfig {
        seed,
        ..VerifyConfig::default()
    };
    let results = py.detach(|| match check {
        Some(id) => run_check(id, &cfg).map(|r| vec![r]),
        None => Some(run_all(&cfg)),
    });
    let results = results.ok_or_else(|| PyValueError::new_err("unknown check id"))?;
    Ok(results.into_iter().map(|r| (r.id, r.name, r.passed, r.detail)).collect())
}

#[pymodule]
fn spinflip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mag_hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(mag_lagrangian, m)?)?;
    m.add_function(wrap_pyfunction!(mag_extremal, m)?)?;
    m.add_function(wrap_pyfunction!(mag_exact_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(mag_constrained_pressure, m)?)?;
    m.add_function(wrap_pyfunction!(pw_lagrangian, m)?)?;
    m.add_function(wrap_pyfunction!(pw_exact_log_prob, m)?)?;
    m.add_function(wrap_pyfunction!(minimize_action, m)?)?;
    m.add_function(wrap_pyfunction!(nonlinear_generator_exact, m)?)?;
    m.add_function(wrap_pyfunction!(glauber_moments, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_class::<PyJumpModel>()?;
    m.add_class::<PyRateFunction>()?;
    m.add_class::<PySpinConfiguration>()?;
    m.add_class::<PyRateTable>()?;
    Ok(())
}
