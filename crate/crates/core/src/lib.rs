//! Multi-input interaction energies on spheres.
//!
//! An `n`-input kernel `K(x_1, ..., x_n)` is a symmetric continuous function of
//! `n` points. Averaging it over all ordered `n`-tuples drawn from a point
//! configuration (or integrating it against a tuple of measures) gives an
//! energy. This crate evaluates such energies exactly on finite atomic
//! measures, estimates them under the uniform surface measure by Monte Carlo,
//! probes (conditional) `n`-positive definiteness with explicit negative-energy
//! witnesses, checks convexity of the energy functional along mixtures, and
//! runs sphere-constrained particle optimization.
//!
//! Module map:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`sphere`] | unit vectors, configurations, atomic measures, sampling, tangent ops |
//! | [`kernels`] | kernel catalog, lifts, pinning, shifts, potentials as kernels |
//! | [`energy`] | discrete/mutual energies, potentials, Monte Carlo, mixture polynomials |
//! | [`certify`] | PD tests, convexity probes, potential constancy, inequality suite |
//! | [`optimize`] | projected gradient descent/ascent of discrete energies |
//! | [`scenario`] | named reproducible checks and their JSON reports |

pub mod certify;
pub mod config;
pub mod energy;
mod error;
pub mod io;
pub mod kernels;
pub mod optimize;
mod reduce;
pub mod scenario;
pub mod sphere;

pub use config::Tolerances;
pub use error::{Error, Result};
pub use kernels::Kernel;
pub use sphere::{DiscreteMeasure, PointConfiguration, UnitVector};
