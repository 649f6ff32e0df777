use nalgebra::DMatrix;

use crate::error::{Result, SscmError};
use crate::sign_geometry::SampleBatch;

pub const DEFAULT_TYLER_TOL: f64 = 1e-9;
pub const DEFAULT_TYLER_MAX_ITER: usize = 2000;

#[derive(Debug, Clone)]
pub struct TylerResult {
    /// Fixed point, normalized to trace `p`.
    pub matrix: DMatrix<f64>,
    pub iterations: usize,
    /// Relative Frobenius change of every iteration.
    pub residuals: Vec<f64>,
}

/// Tyler's M-estimator of scatter about a known zero location:
/// the solution of `M = (p/n) Σ x_j x_j' / (x_j' M⁻¹ x_j)`, iterated from
/// `M = I` with `tr M = p` restored after each step.
pub fn tyler_m_estimator(x: &SampleBatch, tol: f64, max_iter: usize) -> Result<TylerResult> {
    let (n, p) = (x.n(), x.p());
    if p >= n {
        return Err(SscmError::unsupported(format!(
            "Tyler's M-estimator needs p < n (p = {p}, n = {n})"
        )));
    }
    let data = x.data();
    if data.row_iter().any(|r| r.norm_squared() == 0.0) {
        return Err(SscmError::invalid("observations must be nonzero"));
    }
    let xt = data.transpose();
    let mut m = DMatrix::<f64>::identity(p, p);
    let mut residuals = Vec::new();
    for iter in 1..=max_iter {
        let chol = m
            .clone()
            .cholesky()
            .ok_or_else(|| SscmError::numeric("Tyler iterate lost positive definiteness"))?;
        let y = chol.l().solve_lower_triangular(&xt).expect("triangular factor is invertible");
        let mut weighted = data.clone();
        for (j, mut row) in weighted.row_iter_mut().enumerate() {
            row /= y.column(j).norm_squared();
        }
        let next = xt.clone() * weighted;
        let next = crate::linalg::symmetrize(&(&next * (p as f64 / next.trace())));
        let residual = (&next - &m).norm() / m.norm();
        residuals.push(residual);
        m = next;
        if residual < tol {
            return Ok(TylerResult { matrix: m, iterations: iter, residuals });
        }
    }
    Err(SscmError::ConvergenceFailure {
        context: "Tyler M-estimator",
        iterations: max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        last_iterate: Some(m.iter().copied().collect()),
    })
}
