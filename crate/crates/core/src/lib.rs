//! Solver library for the semiclassical cubic nonlinear Schrödinger equation
//! on periodic domains, with deterministic, multiscale and random potentials.
//!
//! The pieces fit together as follows: [`mesh`] builds periodic structured
//! meshes and nested coarse/fine pairs, [`fem`] assembles P1 mass/stiffness/
//! potential operators and provides projections and discrete norms,
//! [`potential`] defines deterministic and parameterized random potential
//! families (explicit sine series and Gaussian-kernel KL expansions),
//! [`msbasis`] constructs multiscale basis functions by equality-constrained
//! energy minimization, [`podreduce`] compresses per-node basis snapshots into
//! a reduced offline/online pipeline, [`propagate`] advances wave fields with
//! two Strang-splitting schemes (eigendecomposition and Crank–Nicolson),
//! [`sampling`] supplies Monte Carlo and randomly shifted lattice quasi-Monte
//! Carlo estimators, and [`observables`] computes mass, energy, second moments
//! and density expectations.

pub mod error;
pub mod fem;
pub mod linalg;
pub mod mesh;
pub mod msbasis;
pub mod observables;
pub mod podreduce;
pub mod potential;
pub mod propagate;
pub(crate) mod quad;
pub mod sampling;

pub use error::{CoreError, Result};

/// Complex scalar used for all wave-field coefficients.
pub type C64 = faer::c64;

/// `exp(i theta)` as a complex scalar.
#[inline]
pub fn cis(theta: f64) -> C64 {
    C64::new(theta.cos(), theta.sin())
}

/// Squared modulus of a complex scalar.
#[inline]
pub fn abs2(z: C64) -> f64 {
    z.re * z.re + z.im * z.im
}
