//! Generalized Marčenko–Pastur law `F^{c,H}`: Stieltjes transform solver,
//! density, support and moments.
//!
//! The transform `m(z)` of `F^{c,H}` solves
//! `m = ∫ dH(t) / (t(1 - c - c z m) - z)` and the companion transform
//! `m̄(z) = -(1 - c)/z + c m(z)` solves `z = -1/m̄ + c ∫ t/(1 + t m̄) dH(t)`.
//! For `c > 1` the law has an atom of mass `1 - 1/c` at zero (it is the limit
//! of the ESD of the `p x p` matrix).

mod spectrum;

pub use spectrum::{
    continuous_density, lsd_density, lsd_moments, lsd_moments_quadrature, lsd_support,
    lsd_total_mass, moments_from_psd, psd_moments_from_lsd, Interval, DEFAULT_DENSITY_EPS,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SscmError};

/// A finitely supported probability measure on `[0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct DiscreteMeasure {
    atoms: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<MeasureRepr> for DiscreteMeasure {
    type Error = SscmError;
    fn try_from(r: MeasureRepr) -> Result<Self> {
        DiscreteMeasure::new(r.atoms)
    }
}

impl From<DiscreteMeasure> for MeasureRepr {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureRepr { atoms: m.atoms }
    }
}

impl DiscreteMeasure {
    /// Validates `(value, weight)` atoms: values finite, nonnegative and
    /// strictly increasing; weights positive and summing to one within 1e-12.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(SscmError::invalid("measure needs at least one atom"));
        }
        for &(v, w) in &atoms {
            if !v.is_finite() || v < 0.0 {
                return Err(SscmError::invalid(format!("atom value {v} must be finite and >= 0")));
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(SscmError::invalid(format!("atom weight {w} must be positive")));
            }
        }
        if atoms.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(SscmError::invalid("atom values must be strictly increasing"));
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SscmError::invalid(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { atoms })
    }

    /// Sorts, merges equal values and renormalizes weights.
    pub fn normalized(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        atoms.retain(|a| a.1 > 0.0);
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += w,
                _ => merged.push((v, w)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if !(total > 0.0) {
            return Err(SscmError::invalid("measure has no positive weight"));
        }
        for a in &mut merged {
            a.1 /= total;
        }
        Self::new(merged)
    }

    pub fn dirac(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    /// Empirical spectral measure of `values`; values within `rel_tol`
    /// (relative to the largest magnitude) of their group's first member are
    /// merged into one atom.
    pub fn from_values(values: &[f64], rel_tol: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(SscmError::invalid("no values"));
        }
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        let w = 1.0 / v.len() as f64;
        let mut atoms: Vec<(f64, f64, usize)> = Vec::new();
        for x in v {
            let x = x.max(0.0);
            match atoms.last_mut() {
                Some(last) if (x - last.0 / last.2 as f64).abs() <= rel_tol * scale => {
                    last.0 += x;
                    last.1 += w;
                    last.2 += 1;
                }
                _ => atoms.push((x, w, 1)),
            }
        }
        Self::normalized(atoms.into_iter().map(|(s, w, k)| (s / k as f64, w)).collect())
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// `∫ t^k dH(t)`.
    pub fn moment(&self, k: i32) -> f64 {
        self.atoms.iter().map(|&(v, w)| w * v.powi(k)).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.atoms.last().map_or(0.0, |a| a.0)
    }

    pub fn min_value(&self) -> f64 {
        self.atoms.first().map_or(0.0, |a| a.0)
    }

    /// `sum_i w_i f(t_i)` over complex-valued `f`.
    pub(crate) fn integrate(&self, f: impl Fn(f64) -> Complex64) -> Complex64 {
        self.atoms.iter().map(|&(t, w)| f(t) * w).sum()
    }
}

/// The pair `(c, H)` of aspect ratio and population spectral distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralModel {
    pub c: f64,
    pub h: DiscreteMeasure,
}

impl SpectralModel {
    pub fn new(c: f64, h: DiscreteMeasure) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(SscmError::invalid(format!("aspect ratio c = {c} must be positive")));
        }
        Ok(Self { c, h })
    }

    /// Right edge of the support bound `max(H) (1 + sqrt c)^2`.
    pub fn support_upper_bound(&self) -> f64 {
        self.h.max_value() * (1.0 + self.c.sqrt()).powi(2)
    }

    /// Right-hand side of the `m` fixed-point equation.
    fn m_map(&self, z: Complex64, m: Complex64) -> Complex64 {
        let c = self.c;
        self.h
            .integrate(|t| (t * (1.0 - c - c * z * m) - z).inv())
    }

    /// `z + 1/m̄ - c ∫ t/(1 + t m̄) dH`, zero at the companion transform.
    fn mbar_residual(&self, z: Complex64, mbar: Complex64) -> Complex64 {
        z + mbar.inv() - self.c * self.h.integrate(|t| t / (1.0 + t * mbar))
    }

    /// `d z / d m̄ = 1/m̄² - c ∫ t²/(1 + t m̄)² dH`.
    fn dz_dmbar(&self, mbar: Complex64) -> Complex64 {
        (mbar * mbar).inv() - self.c * self.h.integrate(|t| t * t / (1.0 + t * mbar).powi(2))
    }
}

/// Stieltjes transforms at one point `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesPair {
    pub z: Complex64,
    /// Transform of `F^{c,H}`.
    pub m: Complex64,
    /// Transform of `c F^{c,H} + (1 - c) δ_0`.
    pub m_under: Complex64,
    /// Derivative of `m_under` in `z`.
    pub m_under_prime: Complex64,
}

const FIXED_POINT_DAMPING: f64 = 0.5;
const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITER: usize = 10_000;
const RESIDUAL_TOL: f64 = 1e-10;

/// Solves for `m(z)`, `m̄(z)` and `m̄'(z)`.
///
/// For `Im z > 0` a damped fixed-point iteration is tried first; when it
/// stagnates, Newton's method on the companion equation is run with
/// continuation in `Im z` from far above the real axis. `Im z < 0` uses
/// conjugate symmetry. Real `z` is accepted only outside the support, where
/// `dz/dm̄ > 0`.
pub fn solve_stieltjes(model: &SpectralModel, z: Complex64) -> Result<StieltjesPair> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return Err(SscmError::invalid("z must be finite"));
    }
    if z.im < 0.0 {
        let up = solve_stieltjes(model, z.conj())?;
        return Ok(StieltjesPair {
            z,
            m: up.m.conj(),
            m_under: up.m_under.conj(),
            m_under_prime: up.m_under_prime.conj(),
        });
    }
    if z.im == 0.0 {
        return solve_real(model, z.re);
    }

    let scale = model.support_upper_bound().max(1.0);
    let mut m = None;
    if z.im > 1e-3 * scale {
        m = fixed_point_m(model, z);
    }
    let (m, mbar) = match m {
        Some(m) => (m, None),
        None => {
            let mbar = newton_continuation(model, z, None)?;
            (mbar_to_m(model, z, mbar), Some(mbar))
        }
    };
    let m = polish_m(model, z, m);
    finish(model, z, m, mbar)
}

fn in_upper_set(model: &SpectralModel, z: Complex64, m: Complex64) -> bool {
    let mbar = -(1.0 - model.c) / z + model.c * m;
    mbar.im > 0.0 && m.im > 0.0
}

fn fixed_point_m(model: &SpectralModel, z: Complex64) -> Option<Complex64> {
    let mut m = -z.inv();
    let mut checkpoint = f64::INFINITY;
    for iter in 0..FIXED_POINT_MAX_ITER {
        let next = model.m_map(z, m);
        let step = (next - m).norm();
        m = m * (1.0 - FIXED_POINT_DAMPING) + next * FIXED_POINT_DAMPING;
        if !m.re.is_finite() || !m.im.is_finite() {
            return None;
        }
        if step < FIXED_POINT_TOL * m.norm().max(1.0) {
            return in_upper_set(model, z, m).then_some(m);
        }
        if iter % 100 == 99 {
            // Stagnation: less than 10% progress over the last 100 steps.
            if step > 0.9 * checkpoint {
                return None;
            }
            checkpoint = step;
        }
    }
    None
}

fn mbar_to_m(model: &SpectralModel, z: Complex64, mbar: Complex64) -> Complex64 {
    (mbar + (1.0 - model.c) / z) / model.c
}

/// Newton's method on the `m` equation; used to remove the cancellation in
/// `(m̄ + (1-c)/z)/c` when `c` is small.
fn polish_m(model: &SpectralModel, z: Complex64, mut m: Complex64) -> Complex64 {
    let c = model.c;
    for _ in 0..8 {
        let g = m - model.m_map(z, m);
        if g.norm() < 1e-15 * m.norm().max(1e-300) {
            break;
        }
        let dg = 1.0
            - model
                .h
                .integrate(|t| t * c * z / (t * (1.0 - c - c * z * m) - z).powi(2));
        let next = m - g / dg;
        if !next.re.is_finite() || !next.im.is_finite() {
            break;
        }
        let g_next = next - model.m_map(z, next);
        if g_next.norm() >= g.norm() {
            break;
        }
        m = next;
    }
    m
}

fn newton_mbar(
    model: &SpectralModel,
    z: Complex64,
    start: Complex64,
    require_upper: bool,
) -> Option<Complex64> {
    let mut mbar = start;
    for _ in 0..100 {
        let f = model.mbar_residual(z, mbar);
        let df = -model.dz_dmbar(mbar);
        let mut step = f / df;
        if !step.re.is_finite() || !step.im.is_finite() {
            return None;
        }
        // Backtrack to stay in the upper half-plane and reduce the residual.
        let fnorm = f.norm();
        let mut accepted = false;
        for _ in 0..40 {
            let cand = mbar - step;
            let ok_half = !require_upper || cand.im > 0.0;
            if ok_half && model.mbar_residual(z, cand).norm() < fnorm.max(1e-300) * (1.0 + 1e-12) {
                mbar = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return (fnorm < 1e-13 * mbar.norm().max(1.0)).then_some(mbar);
        }
        if step.norm() < 1e-15 * mbar.norm().max(1e-300) {
            break;
        }
    }
    let res = model.mbar_residual(z, mbar).norm();
    (res < 1e-11 * (1.0 + z.norm())).then_some(mbar)
}

/// Newton continuation from `Re z + i v_0` down to `z`.
fn newton_continuation(
    model: &SpectralModel,
    z: Complex64,
    warm: Option<(Complex64, Complex64)>,
) -> Result<Complex64> {
    let scale = model.support_upper_bound().max(1.0);
    let (mut v, mut mbar) = match warm {
        Some((zw, mb)) => (zw.im, mb),
        None => {
            let v0 = (10.0 * scale).max(z.im);
            let z0 = Complex64::new(z.re, v0);
            let start = -z0.inv();
            let mb = newton_mbar(model, z0, start, true).ok_or_else(|| {
                SscmError::ConvergenceFailure {
                    context: "Stieltjes solver (continuation start)",
                    iterations: 100,
                    residual: model.mbar_residual(z0, start).norm(),
                    last_iterate: None,
                }
            })?;
            (v0, mb)
        }
    };
    let mut ratio = 0.25;
    let mut guard = 0;
    while v > z.im {
        guard += 1;
        if guard > 10_000 {
            break;
        }
        let next_v = (v * ratio).max(z.im);
        let zn = Complex64::new(z.re, next_v);
        match newton_mbar(model, zn, mbar, true) {
            Some(mb) => {
                mbar = mb;
                v = next_v;
                ratio = (ratio * 0.5).max(0.01);
            }
            None => {
                ratio = ratio.sqrt().min(0.999);
                if 1.0 - ratio < 1e-6 {
                    break;
                }
            }
        }
    }
    if v > z.im {
        return Err(SscmError::ConvergenceFailure {
            context: "Stieltjes solver (continuation)",
            iterations: guard,
            residual: model.mbar_residual(z, mbar).norm(),
            last_iterate: Some(vec![mbar.re, mbar.im]),
        });
    }
    Ok(mbar)
}

fn solve_real(model: &SpectralModel, x: f64) -> Result<StieltjesPair> {
    if x == 0.0 {
        // m̄ has a pole or a branch point at the origin.
        return Err(SscmError::invalid("real z = 0 is not supported"));
    }
    let z_up = Complex64::new(x, 1e-9 * model.support_upper_bound().max(1.0));
    let mbar_up = newton_continuation(model, z_up, None)?;
    let z = Complex64::new(x, 0.0);
    let start = Complex64::new(mbar_up.re, 0.0);
    let mbar = newton_mbar(model, z, start, false)
        .map(|m| Complex64::new(m.re, 0.0))
        .ok_or_else(|| SscmError::invalid(format!("z = {x} lies inside the support")))?;
    // Outside the support the inverse map z(m̄) is increasing.
    let deriv = model.dz_dmbar(mbar).re;
    if !(deriv > 0.0) || mbar_up.im > 1e-6 * mbar_up.norm().max(1.0) {
        return Err(SscmError::invalid(format!("z = {x} lies inside the support")));
    }
    let m = polish_m(model, z, mbar_to_m(model, z, mbar));
    finish(model, z, m, Some(mbar))
}

/// Certifies the solution and assembles the pair. When the solver produced
/// `m̄` directly it is kept, since recomputing it from `m` cancels badly near
/// an atom at zero.
fn finish(
    model: &SpectralModel,
    z: Complex64,
    m: Complex64,
    mbar: Option<Complex64>,
) -> Result<StieltjesPair> {
    let c = model.c;
    let residual = (m - model.m_map(z, m)).norm();
    let from_m = -(1.0 - c) / z + c * m;
    let m_under = match mbar {
        Some(mb) if (mb - from_m).norm() <= 1e-12 * (from_m.norm() + (c * m).norm()) => mb,
        Some(mb) if residual >= RESIDUAL_TOL * m.norm().max(1.0) => mb,
        _ => from_m,
    };
    // Near the atom at zero (c > 1) the m-equation loses all relative
    // precision; the companion equation still certifies the solution.
    let certified = residual < RESIDUAL_TOL * m.norm().max(1.0)
        || model.mbar_residual(z, m_under).norm() < 1e-12 * (z.norm() + 1.0 / m_under.norm());
    if !certified {
        return Err(SscmError::ConvergenceFailure {
            context: "Stieltjes solver",
            iterations: FIXED_POINT_MAX_ITER,
            residual,
            last_iterate: Some(vec![m.re, m.im]),
        });
    }
    let tiny = 1e-12 * m_under.norm();
    if z.im > 0.0 && !(m.im > 0.0 && m_under.im > -tiny) {
        return Err(SscmError::numeric(format!(
            "solution at z = {z} is not a Stieltjes transform value"
        )));
    }
    let m_under_prime = model.dz_dmbar(m_under).inv();
    Ok(StieltjesPair { z, m, m_under, m_under_prime })
}

/// Solves along a path of nearby points, warm-starting each Newton solve
/// from the previous companion transform. Falls back to a cold solve.
pub(crate) fn solve_stieltjes_warm(
    model: &SpectralModel,
    z: Complex64,
    previous: Option<&StieltjesPair>,
) -> Result<StieltjesPair> {
    if let Some(prev) = previous {
        if z.im > 0.0 && prev.z.im > 0.0 {
            if let Some(mbar) = newton_mbar(model, z, prev.m_under, true) {
                let m = polish_m(model, z, mbar_to_m(model, z, mbar));
                if let Ok(pair) = finish(model, z, m, Some(mbar)) {
                    return Ok(pair);
                }
            }
        }
    }
    solve_stieltjes(model, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Root of `c z m² + (z + c - 1) m + 1 = 0` with positive imaginary part.
    fn mp_quadratic_root(c: f64, z: Complex64) -> Complex64 {
        let a = c * z;
        let b = z + c - 1.0;
        let disc = (b * b - 4.0 * a).sqrt();
        let r1 = (-b + disc) / (2.0 * a);
        let r2 = (-b - disc) / (2.0 * a);
        if r1.im > 0.0 { r1 } else { r2 }
    }

    fn dirac_model(c: f64) -> SpectralModel {
        SpectralModel::new(c, DiscreteMeasure::dirac(1.0).unwrap()).unwrap()
    }

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![(1.0, 0.5), (0.5, 0.5)]).is_err());
        assert!(DiscreteMeasure::new(vec![(1.0, 0.5)]).is_err());
        assert!(DiscreteMeasure::new(vec![(-1.0, 1.0)]).is_err());
        assert!(DiscreteMeasure::new(vec![(0.5, 0.5), (1.5, 0.5)]).is_ok());
        let h = DiscreteMeasure::from_values(&[1.0, 2.0, 1.0 + 1e-15, 2.0], 1e-10).unwrap();
        assert_eq!(h.atoms().len(), 2);
        assert_abs_diff_eq!(h.atoms()[0].1, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn measure_json_format() {
        let h = DiscreteMeasure::new(vec![(0.5, 0.5), (1.5, 0.5)]).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"atoms":[[0.5,0.5],[1.5,0.5]]}"#);
        let back: DiscreteMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<DiscreteMeasure>(r#"{"atoms":[[1,0.3]]}"#).is_err());
    }

    #[test]
    fn dirac_matches_quadratic() {
        let z = Complex64::new(1.0, 1.0);
        let pair = solve_stieltjes(&dirac_model(0.5), z).unwrap();
        let expect = mp_quadratic_root(0.5, z);
        assert!((pair.m - expect).norm() < 1e-8);
    }

    #[test]
    fn small_c_reduces_to_transform_of_h() {
        let h = DiscreteMeasure::new(vec![(0.5, 0.3), (1.0, 0.2), (2.0, 0.5)]).unwrap();
        let model = SpectralModel::new(1e-8, h.clone()).unwrap();
        for z in [Complex64::new(1.0, 0.5), Complex64::new(-0.5, 0.1), Complex64::new(3.0, 2.0)] {
            let pair = solve_stieltjes(&model, z).unwrap();
            let direct = h.integrate(|t| (t - z).inv());
            assert!((pair.m - direct).norm() < 1e-6);
        }
    }

    #[test]
    fn lower_half_plane_and_real_axis() {
        let model = dirac_model(0.25);
        let z = Complex64::new(0.7, -0.3);
        let lo = solve_stieltjes(&model, z).unwrap();
        let up = solve_stieltjes(&model, z.conj()).unwrap();
        assert_abs_diff_eq!(lo.m.re, up.m.re, epsilon = 1e-14);
        assert_abs_diff_eq!(lo.m.im, -up.m.im, epsilon = 1e-14);

        // Outside [0.25, 2.25] the transform is real and matches the
        // Dirac-H quadratic's real root continuous with z -> +∞.
        let x = 3.0;
        let pair = solve_stieltjes(&model, Complex64::new(x, 0.0)).unwrap();
        assert_eq!(pair.m.im, 0.0);
        let near = solve_stieltjes(&model, Complex64::new(x, 1e-9)).unwrap();
        assert!((pair.m - near.m).norm() < 1e-7);

        assert!(matches!(
            solve_stieltjes(&model, Complex64::new(1.0, 0.0)),
            Err(SscmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn companion_identity_and_derivative() {
        let h = DiscreteMeasure::new(vec![(0.5, 0.5), (1.5, 0.5)]).unwrap();
        for c in [0.3, 1.0, 2.5] {
            let model = SpectralModel::new(c, h.clone()).unwrap();
            for z in [Complex64::new(0.8, 0.2), Complex64::new(-1.0, 0.5), Complex64::new(4.0, 0.05)] {
                let pair = solve_stieltjes(&model, z).unwrap();
                let ident = -(1.0 - c) / z + c * pair.m;
                assert!((pair.m_under - ident).norm() < 1e-10);
                assert!(pair.m.im > 0.0 && (z * pair.m).im > 0.0);
                let step = 1e-6;
                let hp = solve_stieltjes(&model, z + step).unwrap().m_under;
                let hm = solve_stieltjes(&model, z - step).unwrap().m_under;
                let fd = (hp - hm) / (2.0 * step);
                assert!((fd - pair.m_under_prime).norm() < 1e-5 * pair.m_under_prime.norm());
            }
        }
    }
}
