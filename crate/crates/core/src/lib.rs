//! Numerical laboratory for iterative retraining of generative models on
//! mixtures of fixed real data and freshly sampled synthetic data.
//!
//! The crate provides:
//!
//! * closed-form multivariate Gaussian and EM-fitted Gaussian mixture models
//!   ([`models`]),
//! * the fully self-consuming Gaussian recursion and its collapse-rate
//!   machinery ([`collapse`]),
//! * the iterative retraining loop with mixing ratio `lambda` and the exact
//!   population retraining operator ([`retrain`]),
//! * Hessian/Jacobian estimation and stability certificates around the
//!   optimum ([`stability`]),
//! * distribution-comparison metrics: Wasserstein-1/2, Gaussian Fréchet
//!   distance, k-NN precision/recall ([`metrics`]),
//! * toy 2-D dataset generators and point-set CSV I/O ([`datasets`]),
//! * the experiment runner behind the `selfconsume` CLI ([`runner`]).

pub mod collapse;
pub mod datasets;
mod error;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod retrain;
pub mod rng;
pub mod runner;
pub mod stability;
pub mod stats;
pub mod textio;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Eigenvalue floor applied to every fitted covariance matrix.
///
/// Keeps log-densities and inverses finite under collapse without
/// materially perturbing healthy fits.
pub const COV_FLOOR: f64 = 1e-9;
