//! Finite-dimensional Lagrangians of jump generators.
//!
//! A [`JumpModel`] is a triple `(D, c, μ)` with `D` an `n×n` matrix whose
//! rows sum to zero, positive rates `c` and a positive probability vector
//! `μ`. Its Lagrangian at flux `α` is the Legendre transform
//!
//! ```text
//! L(μ, α) = sup_f [ ⟨f, α⟩ − Σ_i c_i μ_i (e^{(Df)_i} − 1) ].
//! ```
//!
//! Three evaluations are provided:
//!
//! - [`fj_lagrangian_variational`]: the supremum itself, by Newton ascent.
//! - [`fj_lagrangian_dual`]: the convex dual, an unnormalized relative
//!   entropy minimized over `{ν ≥ 0 : Dᵀν = α}`. Strong duality makes it
//!   equal to the variational value; it also returns the minimizer `ν`.
//! - [`fj_paper_closed_form`]: relative entropy of the unique `ν ≥ 0` with
//!   `Dᵀν = α` and total mass `C_μ = Σ c_i μ_i`. It agrees with the other
//!   two only when the dual minimizer happens to carry mass `C_μ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiniteJumpError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("flux has a component outside range(Dᵀ) (residual {residual:e})")]
    NotInRange { residual: f64 },
    #[error("no nonnegative ν solves Dᵀν = α")]
    Infeasible,
    #[error("closed form not well defined: {0}")]
    NotWellDefined(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpModel {
    d: DMatrix<f64>,
    c: DVector<f64>,
    mu: DVector<f64>,
}

impl JumpModel {
    pub fn new(d: DMatrix<f64>, c: Vec<f64>, mu: Vec<f64>) -> Result<Self, FiniteJumpError> {
        let n = d.nrows();
        if d.ncols() != n || n == 0 {
            return Err(FiniteJumpError::InvalidModel("D must be a non-empty square matrix".into()));
        }
        if c.len() != n || mu.len() != n {
            return Err(FiniteJumpError::Dimension {
                expected: n,
                got: c.len().min(mu.len()),
            });
        }
        for (i, row) in d.row_iter().enumerate() {
            let scale = row.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
            if row.sum().abs() > 1e-12 * scale {
                return Err(FiniteJumpError::InvalidModel(format!("row {i} of D does not sum to zero")));
            }
        }
        if c.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(FiniteJumpError::InvalidModel("rates c must be strictly positive".into()));
        }
        if mu.iter().any(|&v| !(v > 0.0)) || (mu.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(FiniteJumpError::InvalidModel("μ must be strictly positive and sum to 1".into()));
        }
        Ok(Self {
            d,
            c: DVector::from_vec(c),
            mu: DVector::from_vec(mu),
        })
    }

    /// Same as [`JumpModel::new`] with `D` given row by row.
    pub fn from_rows(rows: &[Vec<f64>], c: Vec<f64>, mu: Vec<f64>) -> Result<Self, FiniteJumpError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(FiniteJumpError::Dimension {
                expected: n,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat), c, mu)
    }

    /// Two states `±1` flipping at unit rate, `μ = ((1+y)/2, (1−y)/2)`: the
    /// single-spin version of the magnetization dynamics.
    pub fn spin_flip(y: f64) -> Result<Self, FiniteJumpError> {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 2.0, -2.0]),
            vec![1.0, 1.0],
            vec![0.5 * (1.0 + y), 0.5 * (1.0 - y)],
        )
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    /// `C_μ = Σ c_i μ_i`.
    pub fn c_mu(&self) -> f64 {
        self.c.dot(&self.mu)
    }

    /// The `c`-modified measure `μ_c = (c_i μ_i)_i`.
    pub fn mu_c(&self) -> DVector<f64> {
        self.c.component_mul(&self.mu)
    }

    fn flux(&self, alpha: &[f64]) -> Result<DVector<f64>, FiniteJumpError> {
        if alpha.len() != self.dim() {
            return Err(FiniteJumpError::Dimension {
                expected: self.dim(),
                got: alpha.len(),
            });
        }
        Ok(DVector::from_column_slice(alpha))
    }

    /// Objective `⟨f, α⟩ − Σ c_i μ_i (e^{(Df)_i} − 1)` of the variational
    /// problem.
    pub fn variational_objective(&self, f: &[f64], alpha: &[f64]) -> f64 {
        let f = DVector::from_column_slice(f);
        let df = &self.d * &f;
        let w = self.mu_c();
        f.dot(&DVector::from_column_slice(alpha)) - (0..self.dim()).map(|i| w[i] * df[i].exp_m1()).sum::<f64>()
    }

    /// Gradient `α − Dᵀ(μ_c e^{Df})` of [`Self::variational_objective`].
    pub fn variational_gradient(&self, f: &[f64], alpha: &[f64]) -> Vec<f64> {
        let f = DVector::from_column_slice(f);
        let df = &self.d * &f;
        let w = self.mu_c();
        let weighted = DVector::from_iterator(self.dim(), (0..self.dim()).map(|i| w[i] * df[i].exp()));
        (DVector::from_column_slice(alpha) - self.d.transpose() * weighted)
            .iter()
            .copied()
            .collect()
    }
}

/// Flux `α`; a finite Lagrangian requires `Σα_i = 0` because `range(Dᵀ)`
/// is orthogonal to the constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluxVector(pub Vec<f64>);

impl FluxVector {
    pub fn is_balanced(&self, tol: f64) -> bool {
        self.0.iter().sum::<f64>().abs() <= tol * (1.0 + self.0.iter().map(|v| v.abs()).sum::<f64>())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Pseudo-inverse solve of a symmetric positive semidefinite system,
/// dropping eigenvalues below `rel · λ_max`. Returns the solution and the
/// numerical rank.
fn sym_pinv_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, rel: f64) -> (DVector<f64>, usize) {
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let mut x = DVector::zeros(rhs.len());
    let mut rank = 0;
    for k in 0..eig.eigenvalues.len() {
        let lk = eig.eigenvalues[k];
        if lmax > 0.0 && lk > rel * lmax {
            let v = eig.eigenvectors.column(k);
            x += v * (v.dot(rhs) / lk);
            rank += 1;
        }
    }
    (x, rank)
}

/// Orthonormal basis (as rows) of `range(D)`, from the eigenvectors of
/// `DDᵀ` with non-negligible eigenvalue.
fn range_basis(d: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (d * d.transpose()).symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&k| eig.eigenvalues[k] > 1e-12 * lmax)
        .collect();
    DMatrix::from_fn(keep.len(), d.nrows(), |i, j| eig.eigenvectors[(j, keep[i])])
}

/// Component of `α` outside `range(Dᵀ) = ker(D)^⊥`, relative to `1 + |α|`.
fn range_residual(model: &JumpModel, alpha: &DVector<f64>) -> f64 {
    let eig = (model.d.transpose() * &model.d).symmetric_eigen();
    let lmax = eig.eigenvalues.amax();
    let mut outside = 0.0;
    for k in 0..eig.eigenvalues.len() {
        if eig.eigenvalues[k] <= 1e-12 * lmax {
            outside += eig.eigenvectors.column(k).dot(alpha).powi(2);
        }
    }
    outside.sqrt() / (1.0 + alpha.norm())
}

/// Variational Lagrangian by Newton ascent on the concave objective.
///
/// Returns `Ok(+∞)` when `α` lies in `range(Dᵀ)` but the supremum is
/// unbounded (no nonnegative preimage).
pub fn fj_lagrangian_variational(model: &JumpModel, alpha: &[f64]) -> Result<f64, FiniteJumpError> {
    let a = model.flux(alpha)?;
    let residual = range_residual(model, &a);
    if residual > 1e-10 {
        return Err(FiniteJumpError::NotInRange { residual });
    }
    let n = model.dim();
    let w = model.mu_c();
    let d = &model.d;
    let objective = |f: &DVector<f64>| -> f64 {
        let df = d * f;
        f.dot(&a) - (0..n).map(|i| w[i] * df[i].exp_m1()).sum::<f64>()
    };
    let mut f = DVector::zeros(n);
    let mut value = objective(&f);
    for _ in 0..500 {
        let df = d * &f;
        let weights = DVector::from_iterator(n, (0..n).map(|i| w[i] * df[i].exp()));
        let grad = &a - d.transpose() * &weights;
        let gnorm = grad.amax();
        if gnorm < 1e-14 * (1.0 + a.amax() + w.amax()) {
            break;
        }
        // Newton direction for the concave problem: solve Dᵀ W D δ = grad on
        // the quotient by ker(D).
        let hess = d.transpose() * DMatrix::from_diagonal(&weights) * d;
        let (step, _) = sym_pinv_solve(&hess, &grad, 1e-14);
        let slope = grad.dot(&step);
        let dir = if slope > 0.0 { step } else { grad.clone() };
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..80 {
            let trial = &f + t * &dir;
            let tv = objective(&trial);
            if tv.is_finite() && tv >= value + 1e-4 * t * slope {
                f = trial;
                value = tv;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        if (d * &f).amax() > 300.0 {
            return Ok(f64::INFINITY);
        }
    }
    if (d * &f).amax() > 60.0 {
        return Ok(f64::INFINITY);
    }
    Ok(value)
}

/// Minimizer and value of the dual relative-entropy program.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualSolution {
    pub value: f64,
    pub nu: Vec<f64>,
}

impl DualSolution {
    pub fn mass(&self) -> f64 {
        self.nu.iter().sum()
    }
}

fn unnormalized_kl(nu: &DVector<f64>, w: &DVector<f64>) -> f64 {
    nu.iter()
        .zip(w.iter())
        .map(|(&v, &wi)| if v > 0.0 { v * (v / wi).ln() - v + wi } else { wi })
        .sum()
}

/// `min { Σ ν_i log(ν_i / (c_i μ_i)) − ν_i + c_i μ_i : ν ≥ 0, Dᵀν = α }`.
///
/// Solved by infeasible-start Newton on the KKT system, with the linear
/// constraint reduced to an orthonormal row basis of `Dᵀ`.
pub fn fj_lagrangian_dual(model: &JumpModel, alpha: &[f64]) -> Result<DualSolution, FiniteJumpError> {
    let a = model.flux(alpha)?;
    let n = model.dim();
    let w = model.mu_c();
    // Rows of `amat` span range(D); Dᵀν depends on ν only through amat·ν.
    let amat = range_basis(&model.d);
    let r = amat.nrows();
    let m = model.d.transpose() * amat.transpose();
    let Some(chol) = (m.transpose() * &m).cholesky() else {
        return Err(FiniteJumpError::Infeasible);
    };
    let b = chol.solve(&(m.transpose() * &a));
    if (&m * &b - &a).norm() > 1e-10 * (1.0 + a.norm()) {
        return Err(FiniteJumpError::Infeasible);
    }

    let mut nu = w.clone();
    let mut lambda = DVector::zeros(r);
    let residual = |nu: &DVector<f64>, lambda: &DVector<f64>| -> f64 {
        let g = DVector::from_fn(n, |i, _| (nu[i] / w[i]).ln());
        let rd = g + amat.transpose() * lambda;
        let rp = &amat * nu - &b;
        (rd.norm_squared() + rp.norm_squared()).sqrt()
    };
    let mut res = residual(&nu, &lambda);
    for _ in 0..200 {
        if res < 1e-13 {
            break;
        }
        let g = DVector::from_fn(n, |i, _| (nu[i] / w[i]).ln());
        let rp = &amat * &nu - &b;
        let vmat = DMatrix::from_diagonal(&nu);
        let schur = &amat * &vmat * amat.transpose();
        let rhs = &rp - &amat * (&vmat * &g);
        let Some(new_lambda) = schur.clone().cholesky().map(|ch| ch.solve(&rhs)) else {
            break;
        };
        let dnu = -(&vmat * (&g + amat.transpose() * &new_lambda));
        let dlambda = &new_lambda - &lambda;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = &nu + t * &dnu;
            if trial.iter().all(|&v| v > 0.0) {
                let tl = &lambda + t * &dlambda;
                let tr = residual(&trial, &tl);
                if tr <= (1.0 - 0.01 * t) * res {
                    nu = trial;
                    lambda = tl;
                    res = tr;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let primal = (&amat * &nu - &b).norm();
    if primal > 1e-8 * (1.0 + b.norm()) {
        return Err(FiniteJumpError::Infeasible);
    }
    Ok(DualSolution {
        value: unnormalized_kl(&nu, &w),
        nu: nu.iter().copied().collect(),
    })
}

/// Relative entropy of the unique `ν ≥ 0` with `Dᵀν = α` and `Σν = C_μ`
/// with respect to `μ_c`.
pub fn fj_paper_closed_form(model: &JumpModel, alpha: &[f64]) -> Result<f64, FiniteJumpError> {
    let a = model.flux(alpha)?;
    let n = model.dim();
    let c_mu = model.c_mu();
    let mut system = DMatrix::zeros(n + 1, n);
    system.view_mut((0, 0), (n, n)).copy_from(&model.d.transpose());
    system.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(&a);
    rhs[n] = c_mu;
    let normal = system.transpose() * &system;
    let (nu, rank) = sym_pinv_solve(&normal, &(system.transpose() * &rhs), 1e-12);
    if rank < n {
        return Err(FiniteJumpError::NotWellDefined(
            "solution set of Dᵀν = α, Σν = C_μ is not a single point".into(),
        ));
    }
    if (&system * &nu - &rhs).norm() > 1e-10 * (1.0 + rhs.norm()) {
        return Err(FiniteJumpError::NotWellDefined("no ν with Dᵀν = α and Σν = C_μ".into()));
    }
    if nu.iter().any(|&v| v < -1e-12) {
        return Err(FiniteJumpError::NotWellDefined("the mass-constrained ν has negative entries".into()));
    }
    let w = model.mu_c();
    Ok(nu
        .iter()
        .zip(w.iter())
        .map(|(&v, &wi)| if v > 0.0 { v * (v / wi).ln() } else { 0.0 })
        .sum())
}

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Relative entropy per site of the product measure with mean spin `x`
/// with respect to the one with mean spin `y`.
pub fn product_lagrangian(x: f64, y: f64) -> f64 {
    xlogy_ratio(0.5 * (1.0 + x), 0.5 * (1.0 + y)) + xlogy_ratio(0.5 * (1.0 - x), 0.5 * (1.0 - y))
}

/// All three evaluations side by side.
#[derive(Debug, Clone, Serialize)]
pub struct FdComparison {
    pub variational: f64,
    pub dual: Option<DualSolution>,
    pub dual_error: Option<String>,
    pub dual_mass: Option<f64>,
    pub c_mu: f64,
    pub closed_form: Option<f64>,
    pub closed_form_error: Option<String>,
}

pub fn fd_compare(model: &JumpModel, alpha: &[f64]) -> Result<FdComparison, FiniteJumpError> {
    let variational = fj_lagrangian_variational(model, alpha)?;
    let (dual, dual_error) = match fj_lagrangian_dual(model, alpha) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (closed_form, closed_form_error) = match fj_paper_closed_form(model, alpha) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(FdComparison {
        variational,
        dual_mass: dual.as_ref().map(DualSolution::mass),
        dual,
        dual_error,
        c_mu: model.c_mu(),
        closed_form,
        closed_form_error,
    })
}

/// A random model with rate-matrix `D` (nonnegative off-diagonals) and a
/// flux `α = Dᵀν₀` with `ν₀ > 0`, so every route is finite.
pub fn random_feasible_instance(n: usize, seed: u64) -> (JumpModel, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut row_sum = 0.0;
        for j in 0..n {
            if i != j {
                let v = rng.random_range(0.0..2.0);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        d[(i, i)] = -row_sum;
    }
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut mu: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // Make the entries sum to one exactly in floating point.
    let drift: f64 = mu.iter().sum::<f64>() - 1.0;
    mu[0] -= drift;
    let nu0 = DVector::from_fn(n, |_, _| rng.random_range(0.05..2.0));
    let alpha: Vec<f64> = (d.transpose() * nu0).iter().copied().collect();
    (JumpModel::new(d, c, mu).expect("random model satisfies invariants"), alpha)
}
