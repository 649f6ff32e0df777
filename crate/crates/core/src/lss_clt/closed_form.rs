use super::{NormalApprox, ShapeContext};
use crate::error::{Result, SscmError};

/// Centering terms `(β₂, β₃) = (α₂ + c, α₃ + 3cα₂ + c²)` with
/// `α_k = tr(Σ^k)/p`.
pub fn beta_centering(ctx: &ShapeContext) -> (f64, f64) {
    let c = ctx.c_n;
    let a2 = ctx.h_p.moment(2);
    let a3 = ctx.h_p.moment(3);
    (a2 + c, a3 + 3.0 * c * a2 + c * c)
}

/// Contribution of the spatial-median drift `κ` to the means of
/// `p(β̂₂ - β₂)` and `p(β̂₃ - β₃)`.
pub fn median_drift(ctx: &ShapeContext) -> (f64, f64) {
    let c = ctx.c_n;
    let r = ctx.r_w;
    let a2 = ctx.h_p.moment(2);
    let q = r * r - 2.0 * r + 2.0;
    (c * c * q, 3.0 * c * c * q * a2 + c.powi(3) * (r.powi(3) - 3.0 * r + 4.0))
}

/// Closed-form normal approximation of `p(β̂₂ - β₂, β̂₃ - β₃)` where
/// `β̂_k = tr(B_n^k)/p`.
///
/// The `(τ - 3)` covariance correction is available only for diagonal `A`;
/// any other mixing with `τ ≠ 3` is rejected.
pub fn beta_moments_normal(ctx: &ShapeContext) -> Result<NormalApprox> {
    let tau_part = ctx.tau != 3.0;
    if tau_part && !ctx.mixing.is_diagonal() {
        return Err(SscmError::unsupported(
            "the (tau - 3) covariance terms are only available for diagonal A",
        ));
    }
    let c = ctx.c_n;
    let al: Vec<f64> = (0..=6).map(|k| ctx.h_p.moment(k)).collect();
    let (a2, a3, a4, a5, a6) = (al[2], al[3], al[4], al[5], al[6]);

    let (mut mu2, mut mu3) = (-c * a2, -3.0 * c * (a3 + c * a2));
    if ctx.median_estimated {
        let (d2, d3) = median_drift(ctx);
        mu2 += d2;
        mu3 += d3;
    }

    let c2 = c * c;
    let c3 = c2 * c;
    let k4 = a2.powi(3) - 2.0 * a2 * a3 + a4;
    let k5 = a2 * a2 * a3 - a3 * a3 - a2 * a4 + a5;
    let k6 = a2 * a3 * a3 - 2.0 * a3 * a4 + a6;

    let mut s22 = 8.0 * c * k4 + 4.0 * c2 * a2 * a2;
    let mut s23 = 12.0 * c * k5
        + 12.0 * c2 * (2.0 * a2.powi(3) - 3.0 * a2 * a3 + 2.0 * a4)
        + 12.0 * c3 * a2 * a2;
    let mut s33 = 18.0 * c * k6
        + 18.0 * c2 * (4.0 * a2 * a2 * a3 - 3.0 * a3 * a3 - 3.0 * a2 * a4 + 4.0 * a5)
        + 6.0 * c3 * (13.0 * a2.powi(3) - 12.0 * a2 * a3 + 12.0 * a4)
        + 36.0 * c2 * c2 * a2 * a2;
    if tau_part {
        let t = ctx.tau - 3.0;
        s22 += t * 4.0 * c * k4;
        s23 += t * (6.0 * c * k5 + 12.0 * c2 * k4);
        s33 += t * (9.0 * c * k6 + 36.0 * c2 * k5 + 36.0 * c3 * k4);
    }
    Ok(NormalApprox { mean: vec![mu2, mu3], cov: vec![vec![s22, s23], vec![s23, s33]] })
}
