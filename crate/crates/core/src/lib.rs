//! Quasi-periodic, exponentially localized solutions of the discrete
//! nonlinear Schrodinger equation with a quasi-periodic potential on `Z^d`,
//!
//! ```text
//! i u_t + (eps Delta + V(theta + n alpha)) u + delta |u|^{2p} u = 0,
//! ```
//!
//! built from a Lyapunov-Schmidt split and a multiscale Newton iteration on
//! the Fourier lattice `Z^b x Z^d x {+,-}`, together with the linear and
//! Diophantine checks the construction relies on.
//!
//! Modules, bottom up:
//! - [`lattice`]: sites, elementary regions, indexing, sections
//! - [`potential`]: trigonometric potentials and model parameters
//! - [`diophantine`]: sublevel bounds, Wronskians, Diophantine tests, clustering
//! - [`linop`]: `H(sigma)` assembly, Green's functions, LDE classification
//! - [`solver`]: nonlinear residual, Q-equation, Newton iteration
//! - [`evolve`]: time-domain verification
//! - [`harness`]: configuration, pipelines, manifests

pub mod diophantine;
pub mod error;
pub mod evolve;
pub mod harness;
pub mod lattice;
pub mod linalg;
pub mod linop;
pub mod potential;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use lattice::{Region, Sign, Site};
pub use potential::{ModelParams, TrigPoly};
