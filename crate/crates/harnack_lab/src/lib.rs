//! Numerical laboratory for the equation
//! `u_t = |Du|^{q-p} div(|Du|^{p-2} Du)` restricted to radial solutions.
//!
//! The crate is split along the objects it manipulates:
//!
//! - [`equation_core`]: exponents, regimes, intrinsic cylinders and pointwise residuals.
//! - [`comparison_functions`]: the explicit subsolutions Phi, G and Psi with grid certificates.
//! - [`radial_solver`]: finite-volume solver for the radial problem on a ball.
//! - [`harnack_verifier`]: forward/backward Harnack checks and Harnack chains on trajectories.
//! - [`extinction_lab`]: extinction experiments, the radial Sobolev ratio and the counterexample record.
//! - [`io`]: CSV/JSON writers shared by the command line front-end.

pub mod comparison_functions;
pub mod equation_core;
pub mod error;
pub mod extinction_lab;
pub mod harnack_verifier;
pub mod io;
pub mod radial_solver;

pub use error::{Error, Result};
