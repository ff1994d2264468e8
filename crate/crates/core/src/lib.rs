//! Maximum-likelihood transition curves and quasipotentials for stochastic
//! systems with state-dependent noise.
//!
//! The geometric minimum action method ([`gmam`]) minimizes
//! `S(γ) = ∫_γ |b|_x |dx|_x − ⟨b, dx⟩_x` in the metric of `A(x)⁻¹`,
//! `A = σσᵀ`. Equilibria, saddles and folds are located by [`equilibria`];
//! [`superlattice`] provides the sequential-tunneling superlattice model and
//! [`scaling`] the bias sweeps and power-law fits of the barrier near a fold.

pub mod curve;
pub mod equilibria;
pub mod error;
pub mod gmam;
pub mod metric;
pub mod models;
pub mod scaling;
pub mod superlattice;
pub mod system;
pub mod tridiag;

pub use curve::{init_curve, Curve, Interpolation};
pub use error::{Error, Result};
pub use gmam::{GmamResult, GmamSettings};
pub use metric::MetricContext;
pub use system::{SdeSystem, State};
