//! Gaussian approximation of linear spectral statistics of the SSCM.
//!
//! For analytic `f_1..f_k`, `p (∫ f_j dF^{B_n} - ∫ f_j dF^{c_n,H_p})` is
//! approximately Gaussian with mean and covariance given by contour
//! integrals of the kernels `κ + μ₁ + (τ-3)μ₂` and `σ₁ + (τ-3)σ₂`.
//! [`beta_moments_normal`] gives the same approximation in closed form for
//! `f = x²` and `f = x³`.

mod closed_form;
mod context;
mod contour;
mod kernels;

pub use closed_form::{beta_centering, beta_moments_normal, median_drift};
pub use context::{aux_quantities, sigma_from_mixing, Mixing, ShapeContext};
pub use contour::{clt_interval, lss_normal_approx, ContourSpec, NormalApprox, TestFunction};
pub use kernels::{cov_kernel, mean_kernel};

#[cfg(test)]
mod tests;
