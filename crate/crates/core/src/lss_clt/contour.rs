use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kernels::{kappa_at, mu1_at, mu2_at, sigma1_at, sigma2_at, Node};
use super::ShapeContext;
use crate::error::{Result, SscmError};
use crate::mp_law::{solve_stieltjes_warm, StieltjesPair};

/// An analytic test function, evaluated on the contour.
pub type TestFunction<'a> = &'a (dyn Fn(Complex64) -> Complex64 + Sync);

const REL_TOL: f64 = 1e-6;
const MAX_NODES_PER_EDGE: usize = 1024;
const IMAG_TOL: f64 = 1e-6;

/// Counter-clockwise rectangle `[x_left, x_right] x [-v0, v0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub x_left: f64,
    pub x_right: f64,
    pub v0: f64,
    /// Starting Gauss–Legendre order per edge; doubled until converged.
    pub nodes_per_edge: usize,
}

/// Interval `I_c` that carries the limiting spectrum:
/// `[λ_min δ_(0,1)(c) (1-√c)², λ_max (1+√c)²]` with `λ` the spectrum of `Σ`.
pub fn clt_interval(ctx: &ShapeContext) -> (f64, f64) {
    let c = ctx.c_n;
    let (lo, hi) = ctx.sigma_eigen_range();
    let left = if c > 0.0 && c < 1.0 { lo * (1.0 - c.sqrt()).powi(2) } else { 0.0 };
    (left, hi * (1.0 + c.sqrt()).powi(2))
}

impl ContourSpec {
    /// Margin `0.25 (s_r - s_l)` around `I_c = [s_l, s_r]`, half-height 0.5
    /// and 64 nodes per edge. The left edge never crosses below `s_l / 2`
    /// when `s_l > 0`, keeping the pole of `m̄` at zero outside.
    pub fn for_context(ctx: &ShapeContext) -> Self {
        let (sl, sr) = clt_interval(ctx);
        let margin = 0.25 * (sr - sl);
        let x_left = if sl > 0.0 { (sl - margin).max(0.5 * sl) } else { -margin };
        ContourSpec { x_left, x_right: sr + margin, v0: 0.5, nodes_per_edge: 64 }
    }

    pub fn validate(&self, ctx: &ShapeContext) -> Result<()> {
        let (sl, sr) = clt_interval(ctx);
        if !(self.v0 > 0.0) || !(self.x_left < sl) || !(self.x_right > sr) || self.nodes_per_edge == 0 {
            return Err(SscmError::invalid(format!(
                "contour [{}, {}] x ±{} must strictly enclose I_c = [{sl}, {sr}]",
                self.x_left, self.x_right, self.v0
            )));
        }
        if ctx.c_n < 1.0 && sl > 0.0 && self.x_left <= 0.0 {
            return Err(SscmError::invalid(
                "for c < 1 the contour must not enclose the origin",
            ));
        }
        Ok(())
    }

    /// The inner contour for the second variable of the double integral:
    /// halfway between this rectangle and `I_c`, at half the height.
    fn inner(&self, ctx: &ShapeContext) -> Self {
        let (sl, sr) = clt_interval(ctx);
        ContourSpec {
            x_left: 0.5 * (self.x_left + sl),
            x_right: 0.5 * (self.x_right + sr),
            v0: 0.5 * self.v0,
            nodes_per_edge: self.nodes_per_edge,
        }
    }

    /// Quadrature nodes `(z, dz weight)` along the rectangle in
    /// counter-clockwise order.
    fn nodes(&self, order: usize) -> Vec<(Complex64, Complex64)> {
        let corners = [
            Complex64::new(self.x_left, -self.v0),
            Complex64::new(self.x_right, -self.v0),
            Complex64::new(self.x_right, self.v0),
            Complex64::new(self.x_left, self.v0),
        ];
        let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("nonzero order"));
        let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::with_capacity(4 * order);
        for e in 0..4 {
            let (a, b) = (corners[e], corners[(e + 1) % 4]);
            let half = 0.5 * (b - a);
            for &(t, w) in &pairs {
                out.push((a + half * (t + 1.0), half * w));
            }
        }
        out
    }
}

/// Gaussian approximation `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalApprox {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl NormalApprox {
    /// `(x_j - mean_j) / sqrt(cov_jj)`.
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .enumerate()
            .map(|(j, (xj, mj))| (xj - mj) / self.cov[j][j].sqrt())
            .collect()
    }
}

struct Path {
    nodes: Vec<Node>,
    dz: Vec<Complex64>,
}

fn solve_path(ctx: &ShapeContext, contour: &ContourSpec, order: usize, hadamard: bool) -> Result<Path> {
    let model = ctx.spectral_model();
    let mut prev: Option<StieltjesPair> = None;
    let mut nodes = Vec::new();
    let mut dz = Vec::new();
    for (z, w) in contour.nodes(order) {
        let pair = solve_stieltjes_warm(&model, z, prev.as_ref())?;
        nodes.push(Node::new(ctx, &pair, hadamard));
        dz.push(w);
        prev = Some(pair);
    }
    Ok(Path { nodes, dz })
}

fn evaluate(
    ctx: &ShapeContext,
    fs: &[TestFunction],
    outer: &ContourSpec,
    order: usize,
    hadamard: bool,
) -> Result<(Vec<Complex64>, Vec<Vec<Complex64>>)> {
    let k = fs.len();
    let c1 = solve_path(ctx, outer, order, hadamard)?;
    let c2 = solve_path(ctx, &outer.inner(ctx), order, hadamard)?;

    let mut mean = vec![Complex64::new(0.0, 0.0); k];
    for (nd, &dz) in c1.nodes.iter().zip(&c1.dz) {
        let kernel = kappa_at(ctx, nd) + mu1_at(ctx, nd) + (ctx.tau - 3.0) * mu2_at(ctx, nd);
        for (j, f) in fs.iter().enumerate() {
            mean[j] += f(nd.z) * kernel * dz;
        }
    }
    let scale = -1.0 / (2.0 * PI * Complex64::i());
    mean.iter_mut().for_each(|m| *m *= scale);

    let f2: Vec<Vec<Complex64>> = c2.nodes.iter().map(|nd| fs.iter().map(|f| f(nd.z)).collect()).collect();
    // Row a: Σ_b S(z_a, z̃_b) dz̃_b f_l(z̃_b), then weighted by f_j(z_a) dz_a.
    let rows: Vec<Vec<Vec<Complex64>>> = c1
        .nodes
        .par_iter()
        .zip(c1.dz.par_iter())
        .map(|(x, &dzx)| {
            let mut r = vec![Complex64::new(0.0, 0.0); k];
            for ((y, &dzy), fy) in c2.nodes.iter().zip(&c2.dz).zip(&f2) {
                let s = sigma1_at(ctx, x, y) + (ctx.tau - 3.0) * sigma2_at(ctx, x, y);
                let sw = s * dzy;
                for l in 0..k {
                    r[l] += sw * fy[l];
                }
            }
            fs.iter()
                .map(|f| {
                    let fx = f(x.z) * dzx;
                    r.iter().map(|rl| fx * rl).collect()
                })
                .collect()
        })
        .collect();
    let mut cov = vec![vec![Complex64::new(0.0, 0.0); k]; k];
    for row in &rows {
        for j in 0..k {
            for l in 0..k {
                cov[j][l] += row[j][l];
            }
        }
    }
    let scale = -1.0 / (4.0 * PI * PI);
    cov.iter_mut().flatten().for_each(|v| *v *= scale);
    Ok((mean, cov))
}

fn max_rel_change(a: &[Complex64], b: &[Complex64]) -> f64 {
    let scale = a.iter().map(|v| v.norm()).fold(1e-10, f64::max);
    a.iter().zip(b).map(|(x, y)| (x - y).norm() / scale).fold(0.0, f64::max)
}

/// Mean vector and covariance matrix of the Gaussian approximation for
/// `p (∫ f_j dF^{B_n} - ∫ f_j dF^{c_n, H_p})`, `j = 1..k`, by contour
/// integration of the CLT kernels. Nodes are doubled until every entry
/// changes by less than 1e-6 relative to the largest entry.
pub fn lss_normal_approx(
    ctx: &ShapeContext,
    fs: &[TestFunction],
    contour: &ContourSpec,
) -> Result<NormalApprox> {
    integrate(ctx, fs, contour, ctx.tau != 3.0)
}

/// `hadamard = false` skips `μ₂` and `σ₂`, which carry the factor `τ - 3`.
pub(crate) fn integrate(
    ctx: &ShapeContext,
    fs: &[TestFunction],
    contour: &ContourSpec,
    hadamard: bool,
) -> Result<NormalApprox> {
    contour.validate(ctx)?;
    if fs.is_empty() {
        return Err(SscmError::invalid("at least one test function is required"));
    }
    let mut order = contour.nodes_per_edge;
    let mut prev = evaluate(ctx, fs, contour, order, hadamard)?;
    loop {
        if order >= MAX_NODES_PER_EDGE {
            return Err(SscmError::numeric(format!(
                "contour quadrature not converged at {order} nodes per edge; last mean {:?}",
                prev.0
            )));
        }
        order *= 2;
        let next = evaluate(ctx, fs, contour, order, hadamard)?;
        let flat = |c: &Vec<Vec<Complex64>>| c.iter().flatten().copied().collect::<Vec<_>>();
        let converged = max_rel_change(&next.0, &prev.0) < REL_TOL
            && max_rel_change(&flat(&next.1), &flat(&prev.1)) < REL_TOL;
        prev = next;
        if converged {
            break;
        }
    }
    let (mean, cov) = prev;
    let real = |v: Complex64| -> Result<f64> {
        if v.im.abs() > IMAG_TOL * v.re.abs().max(1.0) {
            return Err(SscmError::numeric(format!(
                "contour integral has imaginary residue {:e}",
                v.im
            )));
        }
        Ok(v.re)
    };
    let mean = mean.into_iter().map(real).collect::<Result<Vec<_>>>()?;
    let k = fs.len();
    let mut out = vec![vec![0.0; k]; k];
    for j in 0..k {
        for l in 0..k {
            out[j][l] = 0.5 * (real(cov[j][l])? + real(cov[l][j])?);
        }
    }
    Ok(NormalApprox { mean, cov: out })
}
