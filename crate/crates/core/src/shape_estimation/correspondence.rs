use crate::error::{Result, SscmError};

const MAX_BISECTIONS: usize = 200;

/// Eigenvalues of `Σ` implied by shape eigenvalues `T_1..T_p` (diagonal
/// mixing): `Σ_i = T_i - (τ-1)/p T_i² + [(τ-1)/p² Σ_j T_j²] T_i`.
pub fn shape_to_sigma_eigs(shape_eigs: &[f64], tau: f64) -> Vec<f64> {
    let p = shape_eigs.len() as f64;
    let q: f64 = shape_eigs.iter().map(|t| t * t).sum();
    let scale = (tau - 1.0) * q / (p * p);
    shape_eigs.iter().map(|&t| t - (tau - 1.0) / p * t * t + scale * t).collect()
}

/// Inverts [`shape_to_sigma_eigs`], then rescales to `Σ T_i = p`.
///
/// With `a = (τ-1)/p` and the shared coefficient
/// `s = (τ-1)/p² Σ_j T_j²`, each `T_i` is the smaller root of
/// `a T² - (1 + s) T + Σ_i = 0` (the branch through `T = Σ` as `a → 0`), so
/// only the scalar `s` has to be found. `s - a/p Σ_j T_j(s)²` increases in
/// `s`, and bisection on it converges unconditionally. Order is preserved,
/// so ascending input gives ascending output.
pub fn sigma_to_shape_eigs(sigma_eigs: &[f64], tau: f64) -> Result<Vec<f64>> {
    if sigma_eigs.is_empty() {
        return Err(SscmError::invalid("no eigenvalues"));
    }
    if sigma_eigs.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(SscmError::invalid("sigma eigenvalues must be finite and nonnegative"));
    }
    if !(tau >= 1.0) {
        return Err(SscmError::invalid(format!("tau = {tau} must be at least 1")));
    }
    let p = sigma_eigs.len() as f64;
    let a = (tau - 1.0) / p;
    let s_max = sigma_eigs.iter().fold(0.0f64, |m, s| m.max(*s));
    let shape_at = |s: f64| -> Vec<f64> {
        sigma_eigs
            .iter()
            .map(|&x| {
                let d = ((1.0 + s).powi(2) - 4.0 * a * x).max(0.0);
                2.0 * x / ((1.0 + s) + d.sqrt())
            })
            .collect()
    };
    let gap = |s: f64| s - a / p * shape_at(s).iter().map(|t| t * t).sum::<f64>();
    // real roots for every i need (1 + s)² ≥ 4 a max Σ_i
    let mut lo = (2.0 * (a * s_max).sqrt() - 1.0).max(0.0);
    if gap(lo) > 0.0 {
        return Err(SscmError::ConvergenceFailure {
            context: "sigma-to-shape eigenvalue correspondence",
            iterations: 0,
            residual: gap(lo),
            last_iterate: Some(shape_at(lo)),
        });
    }
    let mut hi = lo.max(1.0);
    while gap(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = shape_at(0.5 * (lo + hi));
    let total: f64 = t.iter().sum();
    if !(total > 0.0) {
        return Err(SscmError::invalid("sigma eigenvalues are all zero"));
    }
    Ok(t.iter().map(|v| v * p / total).collect())
}
