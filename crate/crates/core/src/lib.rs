//! Particle laboratory for regularized Coulomb N-body systems.
//!
//! The crate simulates the second-order stochastic particle system with
//! N-dependent kernel regularization, couples it trajectory-by-trajectory
//! (shared initial data, shared Brownian increments) to its McKean-Vlasov
//! mean-field counterpart, and measures the quantities that quantify
//! propagation of chaos: the sup coupling deviation, exceedance frequencies,
//! Wasserstein-2 distances, histogram relative entropies, and L1 marginal
//! distances, together with fitted convergence rates in N.
//!
//! Module map:
//!
//! * [`kernels`] — exact/regularized Coulomb kernels, mollifier, majorant;
//! * [`initial`] — samplers and evaluators for the common initial density;
//! * [`dynamics`] — Euler-Maruyama steps, pairwise and mean-field forces;
//! * [`coupled`] — synchronous coupling runs and VP characteristics;
//! * [`grid`] — histogram/KDE/marginal machinery on density grids;
//! * [`metrics`] — every scalar the convergence statements bound;
//! * [`vp1d`] — deterministic semi-Lagrangian kinetic solver in d = 1;
//! * [`harness`] — config, sweeps, snapshots, CSV/JSON reporting.

pub mod coupled;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod initial;
pub mod kernels;
pub mod metrics;
pub mod quad;
pub mod rng;
pub mod vp1d;

pub use error::{Error, Result};
