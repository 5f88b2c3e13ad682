//! Long-horizon optimal investment under stochastic state variables.
//!
//! Closed-form eigenpairs, Monte Carlo estimators of the Feynman–Kac remainder
//! and its derivative, dynamic and static fund separation, decay-rate and
//! sensitivity experiments, and a steady-state Kalman–Bucy filter for the
//! partially observed Ornstein–Uhlenbeck model.
//!
//! Path simulation runs on rayon when the `parallel` feature is enabled (the
//! default). Results never depend on the number of worker threads.

pub mod convergence;
pub mod dynamics;
pub mod eigen;
pub mod error;
pub mod exec;
pub mod feynman_kac;
pub mod kalman;
pub mod market;
pub mod model;
pub mod portfolio;
pub mod presets;
pub mod quadrature;
pub mod rng;
pub mod scalar;
pub mod sde;
pub mod sensitivity;
pub mod stats;
pub mod verify;

pub use dynamics::{dynamics, Dynamics, MeasureTag};
pub use eigen::{
    eigen_residual, eigenpair, invariant_density, positive_recurrence_check, Eigenpair,
    InvariantDensity,
};
pub use error::{Error, Result};
pub use market::PreferenceMarketSpec;
pub use model::{derive_constants, DerivedConstants, ModelKind, Param, StateModelSpec};
pub use sde::{simulate, Functional, PathBatch, Scheme, SimConfig};
pub use stats::McEstimate;
