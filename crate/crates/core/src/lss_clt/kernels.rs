//! Mean and covariance kernels. All `z`-derivatives are carried out
//! analytically through `m̄'` from implicit differentiation.

use num_complex::Complex64;

use super::ShapeContext;
use crate::error::{Result, SscmError};
use crate::mp_law::{solve_stieltjes, StieltjesPair};

/// Per-point quantities shared by the kernels at `z`.
#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub z: Complex64,
    pub mb: Complex64,
    pub mbp: Complex64,
    /// `1 + z m̄`
    pub a: Complex64,
    /// `d/dz (1 + z m̄) = m̄ + z m̄'`
    pub da: Complex64,
    /// `d/dz (1 + z m̄)/m̄`
    pub d_a_over_mb: Complex64,
    /// `u = -1/m̄` and `u' = m̄'/m̄²`
    pub u: Complex64,
    pub du: Complex64,
    /// `h_p(u)` and `h_p'(u)`; zero when built without Hadamard terms.
    pub h: Complex64,
    pub dh: Complex64,
    /// `1/(λ_g - u)²` and `P` applied to it; empty without Hadamard terms.
    pub w2: Vec<Complex64>,
    pub pw2: Vec<Complex64>,
}

impl Node {
    pub fn new(ctx: &ShapeContext, pair: &StieltjesPair, hadamard: bool) -> Self {
        let z = pair.z;
        let mb = pair.m_under;
        let mbp = pair.m_under_prime;
        let a = 1.0 + z * mb;
        let da = mb + z * mbp;
        let d_a_over_mb = (da * mb - a * mbp) / (mb * mb);
        let u = -mb.inv();
        let du = mbp / (mb * mb);
        let pf = ctx.p as f64;
        let (h, dh, w2, pw2) = if hadamard {
            let w2: Vec<Complex64> =
                ctx.hadamard.lambdas.iter().map(|&l| (l - u).powi(2).inv()).collect();
            let pw2 = ctx.hadamard.apply(&w2);
            (ctx.hadamard.h(u, pf), ctx.hadamard.h_prime(u, pf), w2, pw2)
        } else {
            let zero = Complex64::new(0.0, 0.0);
            (zero, zero, Vec::new(), Vec::new())
        };
        Node { z, mb, mbp, a, da, d_a_over_mb, u, du, h, dh, w2, pw2 }
    }
}

/// `∫ t^k / (1 + m̄ t)^j dH_p`.
fn h_integral(ctx: &ShapeContext, mb: Complex64, k: i32, j: i32) -> Complex64 {
    ctx.h_p.atoms().iter().map(|&(t, w)| w * t.powi(k) / (1.0 + mb * t).powi(j)).sum()
}

/// `∂₁ g_p(u, u) = p⁻¹ Σ_gh P_gh / ((λ_g - u)² (λ_h - u))`.
fn g_first_partial_diag(ctx: &ShapeContext, u: Complex64, w2: &[Complex64]) -> Complex64 {
    let w1: Vec<Complex64> = ctx.hadamard.lambdas.iter().map(|&l| (l - u).inv()).collect();
    ctx.hadamard.bilinear(w2, &w1) / ctx.p as f64
}

pub(crate) fn kappa_at(ctx: &ShapeContext, nd: &Node) -> Complex64 {
    if !ctx.median_estimated {
        return Complex64::new(0.0, 0.0);
    }
    let r = ctx.r_w;
    let zm = nd.z * nd.mb;
    nd.da * nd.a * (zm * (r - 2.0) * (r - 1.0) - r) / (zm * (r + zm * (r - 1.0)))
}

pub(crate) fn mu1_at(ctx: &ShapeContext, nd: &Node) -> Complex64 {
    let c = ctx.c_n;
    let (mb, mbp) = (nd.mb, nd.mbp);
    let first = c * mbp * mbp / mb * h_integral(ctx, mb, 2, 3);
    let second = 2.0 * mbp * nd.a * h_integral(ctx, mb, 2, 2);
    let s2 = ctx.trace_sigma2_over_p;
    let third = (s2 * h_integral(ctx, mb, 1, 1) - h_integral(ctx, mb, 2, 1))
        * (2.0 * c * mb * mbp * h_integral(ctx, mb, 1, 2));
    first - second + third
}

pub(crate) fn mu2_at(ctx: &ShapeContext, nd: &Node) -> Complex64 {
    if nd.w2.is_empty() {
        return Complex64::new(0.0, 0.0);
    }
    let c = ctx.c_n;
    let (mb, mbp) = (nd.mb, nd.mbp);
    let t1 = h_integral(ctx, mb, 1, 2);
    c * mbp / (mb * mb) * g_first_partial_diag(ctx, nd.u, &nd.w2)
        + ctx.zeta_p * nd.a * mbp * t1
        - nd.a * mbp / (mb * mb) * nd.dh
        - c * mbp * t1 * nd.h
}

pub(crate) fn sigma1_at(ctx: &ShapeContext, x: &Node, y: &Node) -> Complex64 {
    let c = ctx.c_n;
    let log_part = x.mbp * y.mbp / (x.mb - y.mb).powi(2) - (x.z - y.z).powi(2).inv();
    let product_part = ctx.trace_sigma2_over_p / c * x.da * y.da
        + (x.d_a_over_mb * y.da + x.da * y.d_a_over_mb) / c;
    2.0 * (log_part + product_part)
}

pub(crate) fn sigma2_at(ctx: &ShapeContext, x: &Node, y: &Node) -> Complex64 {
    if x.w2.is_empty() || y.w2.is_empty() {
        return Complex64::new(0.0, 0.0);
    }
    let c = ctx.c_n;
    // ∂₁∂₂ g_p(u, ũ) = p⁻¹ Σ_gh P_gh / ((λ_g - u)² (λ_h - ũ)²)
    let g12: Complex64 =
        x.w2.iter().zip(&y.pw2).map(|(a, b)| a * b).sum::<Complex64>() / ctx.p as f64;
    c * g12 * x.du * y.du + ctx.zeta_p / c * x.da * y.da - x.da * y.dh * y.du - y.da * x.dh * x.du
}

fn node_at(ctx: &ShapeContext, z: Complex64) -> Result<Node> {
    let pair = solve_stieltjes(&ctx.spectral_model(), z)?;
    Ok(Node::new(ctx, &pair, true))
}

/// `(κ(z), μ₁(z), μ₂(z))`. `κ` is zero for a context with known location.
pub fn mean_kernel(ctx: &ShapeContext, z: Complex64) -> Result<(Complex64, Complex64, Complex64)> {
    let nd = node_at(ctx, z)?;
    Ok((kappa_at(ctx, &nd), mu1_at(ctx, &nd), mu2_at(ctx, &nd)))
}

/// `(σ₁(z, z̃), σ₂(z, z̃))`.
pub fn cov_kernel(ctx: &ShapeContext, z: Complex64, z2: Complex64) -> Result<(Complex64, Complex64)> {
    if (z - z2).norm() == 0.0 {
        return Err(SscmError::invalid("covariance kernel is singular at z = z2"));
    }
    let x = node_at(ctx, z)?;
    let y = node_at(ctx, z2)?;
    Ok((sigma1_at(ctx, &x, &y), sigma2_at(ctx, &x, &y)))
}
