//! Large deviations of spin-flip trajectories.
//!
//! The crate computes Hamiltonians and Lagrangians of spin-flip dynamics
//! from their non-linear generators, minimizes the resulting action
//! functionals, and detects endpoints with more than one optimal history.
//! Every analytic object is paired with an exact finite-size oracle or a
//! simulation so it can be checked numerically.
//!
//! Modules:
//! - [`convex_duality`]: numeric Legendre transforms and duality gaps.
//! - [`poisson_walk`]: birth-death walk with exact two-Poisson oracle.
//! - [`magnetization`]: independent-flip magnetization Hamiltonian,
//!   Lagrangian, extremals and exact binomial oracle.
//! - [`finite_jump`]: finite-dimensional Lagrangians via three routes.
//! - [`trajectory`]: discrete actions, minimizers, Euler-Lagrange residuals
//!   and Hamilton flows.
//! - [`badness`]: optimal initial conditions, bad endpoints, nature/nurture.
//! - [`lattice`]: Glauber dynamics on a torus, the difference operator on
//!   the product basis, and the exact non-linear generator identity.
//! - [`verify`]: the numerical property suite behind the `verify` command.

pub mod badness;
pub mod convex_duality;
pub mod finite_jump;
pub mod lattice;
pub mod magnetization;
pub mod poisson_walk;
pub mod seeds;
pub mod special;
pub mod trajectory;
pub mod verify;
