//! Spectral theory of the high-dimensional sample spatial-sign covariance
//! matrix (SSCM).
//!
//! * [`sign_geometry`]: spatial signs, spatial median, `B_n` and `B_n^0`.
//! * [`mp_law`]: generalized Marčenko–Pastur law solver.
//! * [`lss_clt`]: Gaussian approximation of linear spectral statistics.
//! * [`sphericity`]: robust sphericity tests.
//! * [`shape_estimation`]: six shape-matrix estimators.
//! * [`simulation`]: data generators and Monte Carlo experiments.

pub mod error;
pub mod linalg;
pub mod lss_clt;
pub mod mp_law;
pub mod shape_estimation;
pub mod sign_geometry;
pub mod simulation;
pub mod sphericity;
pub mod stats;

pub use error::{Result, SscmError};
