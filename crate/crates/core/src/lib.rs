//! Numerical homogenization of random convex integral functionals.
//!
//! The crate estimates the effective integrand `W_hom(ξ)` of energies
//! `∫ W(ω, x/ε, ∇u) dx` with stationary ergodic coefficients by minimizing
//! discrete cell problems on growing cubes, and checks the structural
//! properties of `W_hom` and of the associated boundary value problems on
//! desk-scale examples.
//!
//! Module map:
//!
//! - [`integrand`]: integrand families, conjugates, radial envelopes,
//!   truncations, assumption checks.
//! - [`random_field`]: counter-hashed coefficient fields.
//! - [`discretize`]: Kuhn meshes, P1 fields, energy assembly.
//! - [`solver`]: limited-memory quasi-Newton minimization with continuation.
//! - [`homogenize`]: cell problems, `W_hom` estimates, correctors, structural checks.
//! - [`bvp`]: Dirichlet problems at scale `ε` and their homogenized limit.
//! - [`cutoff`]: radial cut-off functions selected on good radii.

pub mod bvp;
pub mod cutoff;
pub mod discretize;
pub mod error;
pub mod homogenize;
pub mod integrand;
pub mod legendre;
pub mod matrix;
pub mod random_field;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use matrix::Mat;
