//! Structure-preserving integration engine for Hamiltonian ODE systems.
//!
//! The crate covers three pipelines and the diagnostics that tie them
//! together:
//!
//! * **Gauss collocation** ([`rkg`]): p-stage implicit Runge-Kutta methods at
//!   Gauss-Legendre nodes. On a linear Hamiltonian field the one-step map
//!   R(τK) is symplectic with unit-modulus spectrum and order 2p; explicit
//!   RK4 and Störmer-Verlet serve as baselines.
//! * **History-state solves** ([`history`]): the stepped recursion written as
//!   one block lower-bidiagonal system L·x = b, solved by forward block
//!   substitution, with exact/estimated condition numbers and query-count
//!   predictions of the equivalent quantum linear-system formulation.
//! * **Carleman embedding** ([`carleman`]): cubic Hamiltonian dynamics lifted
//!   to a truncated linear system on tensor powers, with resonance margins,
//!   convergence radii, truncation-level selection, propagator-norm
//!   envelopes, approximate-symplecticity residuals and a normal-form check.
//!
//! [`models`] defines the systems (harmonic chains, FPU chains, a periodic
//! Lennard-Jones gas, and coefficient-matrix models), [`diagnostics`] the
//! measurement tools, [`config`]/[`csvio`] the experiment-file formats, and
//! [`verify`] the machine-checkable property suites used by the CLI.

pub mod carleman;
pub mod config;
pub mod csvio;
pub mod diagnostics;
pub mod error;
pub mod history;
pub mod linalg;
pub mod models;
pub mod rkg;
pub mod verify;

pub use error::{Error, Result};
