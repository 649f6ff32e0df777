use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{solve_stieltjes, SpectralModel};
use crate::error::{Result, SscmError};

pub const DEFAULT_DENSITY_EPS: f64 = 1e-6;
const SUPPORT_GRID: usize = 2000;
const SUPPORT_BISECTIONS: usize = 200;

/// `Im m(x + i eps) / π`, the density of `F^{c,H}` smoothed at scale `eps`.
pub fn lsd_density(model: &SpectralModel, x: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(SscmError::invalid("eps must be positive"));
    }
    let pair = solve_stieltjes(model, Complex64::new(x, eps))?;
    let d = pair.m.im / PI;
    if d < -1e-12 {
        return Err(SscmError::numeric(format!("negative density {d} at x = {x}")));
    }
    Ok(d.max(0.0))
}

/// Density of the absolutely continuous part of `F^{c,H}`. For `c > 1` the
/// atom `1 - 1/c` at zero is removed by reading the density off `m̄`.
pub fn continuous_density(model: &SpectralModel, x: f64, eps: f64) -> Result<f64> {
    if model.c > 1.0 {
        let pair = solve_stieltjes(model, Complex64::new(x, eps))?;
        Ok((pair.m_under.im / (model.c * PI)).max(0.0))
    } else {
        lsd_density(model, x, eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
}

/// Disjoint intervals carrying the continuous part of `F^{c,H}`.
///
/// On the real line away from `0` and `-1/t` for atoms `t` of `H`,
/// `x(m̄) = -1/m̄ + c ∫ t/(1 + t m̄) dH` is real, and the complement of the
/// support is the image of the set where `x` is increasing. Each pole-free
/// interval is scanned for sign changes of `x'`, the roots are refined by
/// bisection, and the edges are the values of `x` at those roots.
pub fn lsd_support(model: &SpectralModel) -> Result<Vec<Interval>> {
    let poles: Vec<f64> = model
        .h
        .atoms()
        .iter()
        .rev()
        .filter(|a| a.0 > 0.0)
        .map(|a| -1.0 / a.0)
        .collect();
    if poles.is_empty() {
        return Err(SscmError::invalid("H is concentrated at zero"));
    }
    let x_of = |b: f64| -> f64 { -model.mbar_residual(Complex64::new(0.0, 0.0), Complex64::new(b, 0.0)).re };
    let slope = |b: f64| -> f64 { model.dz_dmbar(Complex64::new(b, 0.0)).re };

    // Sample points for each pole-free interval, with flags for whether `x`
    // tends to -∞ (or to 0 from above) at the left end, or to +∞ at the right.
    let mut pieces: Vec<(Vec<f64>, bool, bool)> = Vec::new();
    let q0 = poles[0];
    pieces.push((
        (1..SUPPORT_GRID)
            .rev()
            .map(|i| q0 - q0.abs() * (0.5 * PI * i as f64 / SUPPORT_GRID as f64).tan())
            .collect(),
        true,
        false,
    ));
    pieces.push((
        (1..SUPPORT_GRID)
            .map(|i| q0.abs() * (0.5 * PI * i as f64 / SUPPORT_GRID as f64).tan())
            .collect(),
        true,
        false,
    ));
    let mut bounds: Vec<f64> = poles.clone();
    bounds.push(0.0);
    for w in bounds.windows(2) {
        let (mid, half) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
        let grid = (1..SUPPORT_GRID)
            .map(|i| mid - half * (PI * i as f64 / SUPPORT_GRID as f64).cos())
            .collect();
        pieces.push((grid, false, w[1] == 0.0));
    }

    let root = |mut neg: f64, mut pos: f64| -> f64 {
        for _ in 0..SUPPORT_BISECTIONS {
            let mid = 0.5 * (neg + pos);
            if mid == neg || mid == pos {
                break;
            }
            if slope(mid) > 0.0 {
                pos = mid;
            } else {
                neg = mid;
            }
        }
        pos
    };

    let mut gaps: Vec<(f64, f64)> = Vec::new();
    for (grid, left_open, right_open) in &pieces {
        let up: Vec<bool> = grid.iter().map(|&b| slope(b) > 0.0).collect();
        let mut i = 0;
        while i < grid.len() {
            if !up[i] {
                i += 1;
                continue;
            }
            let j = (i..grid.len()).find(|&k| !up[k]).unwrap_or(grid.len());
            let lo = if i == 0 && *left_open {
                f64::NEG_INFINITY
            } else if i == 0 {
                x_of(grid[0])
            } else {
                x_of(root(grid[i - 1], grid[i]))
            };
            let hi = if j == grid.len() && *right_open {
                f64::INFINITY
            } else if j == grid.len() {
                x_of(grid[j - 1])
            } else {
                x_of(root(grid[j], grid[j - 1]))
            };
            gaps.push((lo, hi));
            i = j;
        }
    }
    gaps.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut intervals = Vec::new();
    let mut cursor = 0.0f64;
    for (lo, hi) in gaps {
        if lo > cursor {
            intervals.push(Interval { left: cursor, right: lo });
        }
        cursor = cursor.max(hi);
    }
    if cursor.is_finite() {
        return Err(SscmError::numeric("support scan found no right edge"));
    }
    Ok(intervals)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// All `(i_1, ..., i_k)` with `sum_j j i_j = k`.
fn weighted_partitions(k: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, part: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if part > k {
            if remaining == 0 {
                out.push(cur.clone());
            }
            return;
        }
        for count in 0..=remaining / part {
            cur.push(count);
            rec(k, part + 1, remaining - count * part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, 1, k, &mut Vec::new(), &mut out);
    out
}

/// Moments `β_1..β_kmax` of `F^{c,H}` from the PSD moments `α_1..α_kmax`:
/// `β_k = Σ c^{s-1} k! / ((k-s+1)! Π i_j!) Π α_j^{i_j}` over
/// `Σ j i_j = k`, `s = Σ i_j`.
pub fn moments_from_psd(alphas: &[f64], c: f64) -> Vec<f64> {
    (1..=alphas.len())
        .map(|k| {
            weighted_partitions(k)
                .iter()
                .map(|parts| {
                    let s: usize = parts.iter().sum();
                    let mut term = c.powi(s as i32 - 1) * factorial(k) / factorial(k - s + 1);
                    for (j, &i) in parts.iter().enumerate() {
                        term *= alphas[j].powi(i as i32) / factorial(i);
                    }
                    term
                })
                .sum()
        })
        .collect()
}

/// Inverts [`moments_from_psd`]: `β_k = α_k + (terms in α_1..α_{k-1})`.
pub fn psd_moments_from_lsd(betas: &[f64], c: f64) -> Vec<f64> {
    let mut alphas = Vec::with_capacity(betas.len());
    for (k, &beta) in betas.iter().enumerate() {
        alphas.push(0.0);
        let lower = moments_from_psd(&alphas, c)[k];
        alphas[k] = beta - lower;
    }
    alphas
}

/// `β_k = ∫ x^k dF^{c,H}` for `k = 1..=k_max` (closed form).
pub fn lsd_moments(model: &SpectralModel, k_max: usize) -> Result<Vec<f64>> {
    if k_max < 1 {
        return Err(SscmError::invalid("k_max must be at least 1"));
    }
    let alphas: Vec<f64> = (1..=k_max).map(|k| model.h.moment(k as i32)).collect();
    Ok(moments_from_psd(&alphas, model.c))
}

/// `β_k` by integrating `x^k` against the recovered density on each support
/// interval. Gauss–Legendre in `θ` after `x = mid - half cos θ`, which
/// smooths square-root and inverse-square-root edges; nodes double until
/// every moment changes by less than `rel_tol`.
pub fn lsd_moments_quadrature(model: &SpectralModel, k_max: usize, rel_tol: f64) -> Result<Vec<f64>> {
    if k_max < 1 {
        return Err(SscmError::invalid("k_max must be at least 1"));
    }
    let intervals = lsd_support(model)?;
    let eps = 1e-10 * model.support_upper_bound().max(1.0);
    let integrate = |nodes: usize| -> Result<Vec<f64>> {
        let rule = GaussLegendre::new(NonZeroUsize::new(nodes).expect("nonzero"));
        let mut acc = vec![0.0; k_max];
        for iv in &intervals {
            let mid = 0.5 * (iv.left + iv.right);
            let half = 0.5 * (iv.right - iv.left);
            for &(node, weight) in rule.as_node_weight_pairs() {
                let theta = 0.5 * PI * (node + 1.0);
                let x = mid - half * theta.cos();
                let jac = half * theta.sin() * 0.5 * PI;
                let dens = continuous_density(model, x, eps)?;
                let mut xk = 1.0;
                for a in acc.iter_mut() {
                    xk *= x;
                    *a += weight * jac * dens * xk;
                }
            }
        }
        Ok(acc)
    };
    let mut nodes = 64;
    let mut prev = integrate(nodes)?;
    while nodes < 8192 {
        nodes *= 2;
        let next = integrate(nodes)?;
        let converged = next
            .iter()
            .zip(&prev)
            .all(|(a, b)| (a - b).abs() <= rel_tol * a.abs());
        prev = next;
        if converged {
            return Ok(prev);
        }
    }
    Err(SscmError::numeric(format!(
        "moment quadrature did not reach relative tolerance {rel_tol}"
    )))
}

/// Total mass recovered by quadrature of the continuous density plus the
/// atom at zero for `c > 1`.
pub fn lsd_total_mass(model: &SpectralModel) -> Result<f64> {
    let intervals = lsd_support(model)?;
    let rule = GaussLegendre::new(NonZeroUsize::new(512).expect("nonzero"));
    let eps = 1e-10 * model.support_upper_bound().max(1.0);
    let mut mass = if model.c > 1.0 { 1.0 - 1.0 / model.c } else { 0.0 };
    for iv in &intervals {
        let mid = 0.5 * (iv.left + iv.right);
        let half = 0.5 * (iv.right - iv.left);
        for &(node, weight) in rule.as_node_weight_pairs() {
            let theta = 0.5 * PI * (node + 1.0);
            let x = mid - half * theta.cos();
            mass += weight * half * theta.sin() * 0.5 * PI * continuous_density(model, x, eps)?;
        }
    }
    Ok(mass)
}
