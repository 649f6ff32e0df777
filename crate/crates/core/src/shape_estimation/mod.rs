//! Shape-matrix estimators `T̂₁..T̂₆`: regularized and spectrum-corrected
//! versions of the sample covariance matrix, the SSCM and Tyler's
//! M-estimator. The location is taken as known (zero); center the data
//! beforehand.

mod correspondence;
mod moments;
mod tyler;

pub use correspondence::{shape_to_sigma_eigs, sigma_to_shape_eigs};
pub use moments::{expand_measure, moment_method_psd, sample_moments, MomentFit, ATOM_PENALTY, MIN_WEIGHT};
pub use tyler::{tyler_m_estimator, TylerResult, DEFAULT_TYLER_MAX_ITER, DEFAULT_TYLER_TOL};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SscmError};
use crate::linalg::{frobenius_distance, reconstruct, sym_eigen_ascending, sym_eigenvalues_ascending};
use crate::sign_geometry::{sscm, Center, SampleBatch};
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// `T̂₁ = ψ(S)`.
    RegularizedScm,
    /// `T̂₂`: SCM eigenvectors with a moment-method spectrum.
    SpectrumCorrectedScm,
    /// `T̂₃`: SSCM eigenvectors with squared-MAD spectrum.
    VisuriSscm,
    /// `T̂₄`: SSCM eigenvectors with a moment-method spectrum mapped from `Σ`
    /// to `T`.
    SpectrumCorrectedSscm,
    /// `T̂₅ = ψ(M)` for Tyler's `M`.
    RegularizedTyler,
    /// `T̂₆`: Tyler eigenvectors with a moment-method spectrum.
    SpectrumCorrectedTyler,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::RegularizedScm,
        EstimatorKind::SpectrumCorrectedScm,
        EstimatorKind::VisuriSscm,
        EstimatorKind::SpectrumCorrectedSscm,
        EstimatorKind::RegularizedTyler,
        EstimatorKind::SpectrumCorrectedTyler,
    ];

    /// 1-based index of `T̂_k`.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).expect("listed") + 1
    }

    pub fn from_index(i: usize) -> Option<Self> {
        i.checked_sub(1).and_then(|i| Self::ALL.get(i).copied())
    }

    pub fn requires_p_below_n(self) -> bool {
        matches!(self, EstimatorKind::RegularizedTyler | EstimatorKind::SpectrumCorrectedTyler)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeOptions {
    /// Fourth moment used to map `Σ` eigenvalues to `T` eigenvalues (`T̂₄`).
    pub tau: f64,
    /// Atom count for the moment method; `None` selects among 1, 2, 3.
    pub num_atoms: Option<usize>,
    pub reference: Option<DMatrix<f64>>,
    pub tyler_tol: f64,
    pub tyler_max_iter: usize,
}

impl Default for ShapeOptions {
    fn default() -> Self {
        Self {
            tau: 3.0,
            num_atoms: None,
            reference: None,
            tyler_tol: DEFAULT_TYLER_TOL,
            tyler_max_iter: DEFAULT_TYLER_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorReport {
    pub kind: EstimatorKind,
    #[serde(skip)]
    pub t_hat: DMatrix<f64>,
    /// Ascending eigenvalues of `t_hat`.
    pub spectrum: Vec<f64>,
    /// Tyler iterations, zero for other kinds.
    pub iterations: usize,
    /// `‖T̂ - reference‖_F` when a reference was supplied.
    pub frobenius_to: Option<f64>,
    /// Moment-method fit for spectrum-corrected kinds.
    pub psd_fit: Option<MomentFit>,
    /// `τ` used for the `Σ`-to-`T` eigenvalue map.
    pub tau_used: Option<f64>,
}

/// `ψ(C) = p C / tr(C)`.
pub fn psi_normalize(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let tr = c.trace();
    if tr == 0.0 || !tr.is_finite() {
        return Err(SscmError::invalid(format!("cannot normalize a matrix with trace {tr}")));
    }
    Ok(c * (c.nrows() as f64 / tr))
}

/// Squared MAD of each projected coordinate `u_k' x_j`, in the column
/// order of `u`.
pub fn mad_by_direction(x: &SampleBatch, u: &DMatrix<f64>) -> Vec<f64> {
    let y = x.data() * u;
    y.column_iter()
        .map(|col| {
            let v: Vec<f64> = col.iter().copied().collect();
            let m = median(&v);
            let dev: Vec<f64> = v.iter().map(|a| (a - m).abs()).collect();
            median(&dev).powi(2)
        })
        .collect()
}

/// Squared MADs of the projections onto the columns of `u`, ascending.
pub fn mad_spectrum(x: &SampleBatch, u: &DMatrix<f64>) -> Vec<f64> {
    let mut v = mad_by_direction(x, u);
    v.sort_by(f64::total_cmp);
    v
}

/// `S = n⁻¹ Σ x_j x_j'` about the known zero location.
pub fn sample_covariance(x: &SampleBatch) -> DMatrix<f64> {
    let d = x.data();
    crate::linalg::symmetrize(&(d.transpose() * d / x.n() as f64))
}

struct Corrected {
    matrix: DMatrix<f64>,
    fit: MomentFit,
}

/// Keeps the eigenvectors of `base` (trace-normalized) and replaces its
/// spectrum by the moment-method estimate, optionally mapped through `map`.
fn spectrum_corrected(
    base: &DMatrix<f64>,
    c_n: f64,
    num_atoms: Option<usize>,
    map: impl Fn(Vec<f64>) -> Result<Vec<f64>>,
) -> Result<Corrected> {
    let base = psi_normalize(base)?;
    let (values, vectors) = sym_eigen_ascending(&base);
    let eigs: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let fit = moment_method_psd(&eigs, c_n, num_atoms)?;
    let mut spectrum = map(expand_measure(&fit.measure, base.nrows()))?;
    spectrum.sort_by(f64::total_cmp);
    Ok(Corrected { matrix: reconstruct(&vectors, &spectrum), fit })
}

/// Computes `T̂_k` from data with known zero location.
pub fn estimate_shape(x: &SampleBatch, kind: EstimatorKind, opts: &ShapeOptions) -> Result<EstimatorReport> {
    let (n, p) = (x.n(), x.p());
    let c_n = p as f64 / n as f64;
    if kind.requires_p_below_n() && p >= n {
        return Err(SscmError::unsupported(format!(
            "{kind:?} needs p < n (p = {p}, n = {n})"
        )));
    }
    let zero = Center::Known(DVector::zeros(p));
    let mut iterations = 0;
    let mut psd_fit = None;
    let mut tau_used = None;
    let raw = match kind {
        EstimatorKind::RegularizedScm => sample_covariance(x),
        EstimatorKind::SpectrumCorrectedScm => {
            let c = spectrum_corrected(&sample_covariance(x), c_n, opts.num_atoms, Ok)?;
            psd_fit = Some(c.fit);
            c.matrix
        }
        EstimatorKind::VisuriSscm => {
            let b = sscm(x, &zero)?;
            let (_, vectors) = sym_eigen_ascending(&b.matrix);
            let spectrum = mad_by_direction(x, &vectors);
            reconstruct(&vectors, &spectrum)
        }
        EstimatorKind::SpectrumCorrectedSscm => {
            let b = sscm(x, &zero)?;
            let tau = opts.tau;
            let c = spectrum_corrected(&b.matrix, c_n, opts.num_atoms, |s| sigma_to_shape_eigs(&s, tau))?;
            psd_fit = Some(c.fit);
            tau_used = Some(tau);
            c.matrix
        }
        EstimatorKind::RegularizedTyler => {
            let t = tyler_m_estimator(x, opts.tyler_tol, opts.tyler_max_iter)?;
            iterations = t.iterations;
            t.matrix
        }
        EstimatorKind::SpectrumCorrectedTyler => {
            let t = tyler_m_estimator(x, opts.tyler_tol, opts.tyler_max_iter)?;
            iterations = t.iterations;
            let c = spectrum_corrected(&t.matrix, c_n, opts.num_atoms, Ok)?;
            psd_fit = Some(c.fit);
            c.matrix
        }
    };
    let t_hat = crate::linalg::symmetrize(&psi_normalize(&raw)?);
    let spectrum = sym_eigenvalues_ascending(&t_hat);
    let frobenius_to = match &opts.reference {
        Some(r) if r.shape() != t_hat.shape() => {
            return Err(SscmError::invalid("reference matrix has the wrong shape"));
        }
        Some(r) => Some(frobenius_distance(&t_hat, r)),
        None => None,
    };
    Ok(EstimatorReport { kind, t_hat, spectrum, iterations, frobenius_to, psd_fit, tau_used })
}
