use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Result, SscmError};
use crate::linalg::sym_eigen_ascending;
use crate::mp_law::{DiscreteMeasure, SpectralModel};

/// Relative tolerance for merging numerically equal eigenvalues of `Σ`.
const GROUP_TOL: f64 = 1e-9;

/// The mixing matrix `A` of the model `x = μ + w A z`.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixing {
    Dense(DMatrix<f64>),
    /// Diagonal `A`, given by its diagonal entries.
    Diagonal(Vec<f64>),
}

impl Mixing {
    pub fn p(&self) -> usize {
        match self {
            Mixing::Dense(a) => a.nrows(),
            Mixing::Diagonal(d) => d.len(),
        }
    }

    /// True for `Diagonal`, and for dense matrices with zero off-diagonal.
    pub fn is_diagonal(&self) -> bool {
        match self {
            Mixing::Diagonal(_) => true,
            Mixing::Dense(a) => (0..a.ncols())
                .all(|j| (0..a.nrows()).all(|i| i == j || a[(i, j)] == 0.0)),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Mixing::Dense(a) => a.clone(),
            Mixing::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }

    /// Shape matrix `T = A A'`.
    pub fn shape_matrix(&self) -> DMatrix<f64> {
        match self {
            Mixing::Dense(a) => a * a.transpose(),
            Mixing::Diagonal(d) => {
                DMatrix::from_diagonal(&DVector::from_iterator(d.len(), d.iter().map(|x| x * x)))
            }
        }
    }

    /// Diagonal of `A' A`.
    pub fn gram_diagonal(&self) -> Vec<f64> {
        match self {
            Mixing::Dense(a) => a.column_iter().map(|col| col.norm_squared()).collect(),
            Mixing::Diagonal(d) => d.iter().map(|x| x * x).collect(),
        }
    }

    fn scaled(&self, s: f64) -> Mixing {
        match self {
            Mixing::Dense(a) => Mixing::Dense(a * s),
            Mixing::Diagonal(d) => Mixing::Diagonal(d.iter().map(|x| x * s).collect()),
        }
    }
}

/// `Σ = p E[s s']` from the large-`p` expansion in `T = A A'`:
///
/// `Σ = T - (τ-3)/p A diag(A'A) A' - (2/p) T² + [(τ-3)/p² tr(A'A∘A'A) + (2/p²) tr T²] T`.
///
/// `A` must satisfy `tr T = p`, in which case `tr Σ = p` exactly.
pub fn sigma_from_mixing(mixing: &Mixing, tau: f64) -> DMatrix<f64> {
    let p = mixing.p() as f64;
    let gram = mixing.gram_diagonal();
    let zeta_sum: f64 = gram.iter().map(|g| g * g).sum();
    match mixing {
        Mixing::Diagonal(_) => {
            let t: Vec<f64> = gram.clone();
            let t2: f64 = t.iter().map(|x| x * x).sum();
            let scale = ((tau - 3.0) * zeta_sum + 2.0 * t2) / (p * p);
            let diag = t.iter().map(|&ti| ti - (tau - 1.0) / p * ti * ti + scale * ti);
            DMatrix::from_diagonal(&DVector::from_iterator(t.len(), diag))
        }
        Mixing::Dense(a) => {
            let t = a * a.transpose();
            let t2 = &t * &t;
            let scaled_a = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * gram[j]);
            let hadamard_term = &scaled_a * a.transpose();
            let scale = ((tau - 3.0) * zeta_sum + 2.0 * t2.trace()) / (p * p);
            let sigma = &t - hadamard_term * ((tau - 3.0) / p) - &t2 * (2.0 / p) + &t * scale;
            crate::linalg::symmetrize(&sigma)
        }
    }
}

/// Spectral data of `Σ` grouped by distinct eigenvalue `λ_g`, with the
/// Hadamard-product weights needed for `h_p` and `g_p`.
///
/// With `D_g(i) = (A' Π_g A)_ii` for the eigenprojector `Π_g`,
/// `q_g = Σ_i D_g(i) (A'A)_ii` and `P_gh = Σ_i D_g(i) D_h(i)`:
/// `h_p(u) = p⁻¹ Σ_g q_g/(λ_g - u)` and
/// `g_p(u, v) = p⁻¹ Σ_gh P_gh / ((λ_g - u)(λ_h - v))`.
#[derive(Debug, Clone)]
pub(crate) struct HadamardParts {
    pub lambdas: Vec<f64>,
    pub q: Vec<f64>,
    pub pmat: DMatrix<f64>,
}

impl HadamardParts {
    pub fn h(&self, u: Complex64, p: f64) -> Complex64 {
        self.lambdas.iter().zip(&self.q).map(|(&l, &q)| q / (l - u)).sum::<Complex64>() / p
    }

    pub fn h_prime(&self, u: Complex64, p: f64) -> Complex64 {
        self.lambdas
            .iter()
            .zip(&self.q)
            .map(|(&l, &q)| q / (l - u).powi(2))
            .sum::<Complex64>()
            / p
    }

    pub fn g(&self, u: Complex64, v: Complex64, p: f64) -> Complex64 {
        let a: Vec<Complex64> = self.lambdas.iter().map(|&l| (l - u).inv()).collect();
        let b: Vec<Complex64> = self.lambdas.iter().map(|&l| (l - v).inv()).collect();
        self.bilinear(&a, &b) / p
    }

    /// `Σ_gh a_g P_gh b_h`.
    pub fn bilinear(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let pb = self.apply(b);
        a.iter().zip(&pb).map(|(x, y)| x * y).sum()
    }

    /// `P b`.
    pub fn apply(&self, b: &[Complex64]) -> Vec<Complex64> {
        let k = self.lambdas.len();
        (0..k)
            .map(|g| (0..k).map(|h| b[h] * self.pmat[(g, h)]).sum())
            .collect()
    }
}

/// Everything the CLT kernels need about one model: `c_n`, the spectrum
/// `H_p` of `Σ`, `τ`, `r_w` and the mixing matrix `A`.
#[derive(Debug, Clone)]
pub struct ShapeContext {
    pub n: usize,
    pub p: usize,
    pub c_n: f64,
    pub tau: f64,
    pub r_w: f64,
    /// `A`, rescaled so that `tr(A A') = p`.
    pub mixing: Mixing,
    pub sigma: DMatrix<f64>,
    /// Empirical spectral distribution of `Σ`.
    pub h_p: DiscreteMeasure,
    pub trace_sigma2_over_p: f64,
    /// `p⁻¹ tr[(A'A) ∘ (A'A)]`.
    pub zeta_p: f64,
    /// When false the location is known and `B_n^0` is used: the drift
    /// `κ(z)` from estimating the spatial median drops out.
    pub median_estimated: bool,
    pub(crate) hadamard: HadamardParts,
}

impl ShapeContext {
    /// Builds the context with `Σ` from the large-`p` expansion in `A`.
    pub fn new(mixing: Mixing, tau: f64, r_w: f64, n: usize) -> Result<Self> {
        let mixing = normalize_mixing(mixing)?;
        let sigma = sigma_from_mixing(&mixing, tau);
        Self::assemble(mixing, sigma, tau, r_w, n)
    }

    /// Builds the context with a supplied `Σ` (rescaled to `tr Σ = p`).
    pub fn with_sigma(mixing: Mixing, sigma: DMatrix<f64>, tau: f64, r_w: f64, n: usize) -> Result<Self> {
        let mixing = normalize_mixing(mixing)?;
        let p = mixing.p();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(SscmError::invalid(format!(
                "sigma is {}x{}, expected {p}x{p}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        let tr = sigma.trace();
        if !(tr > 0.0) {
            return Err(SscmError::invalid("sigma must have positive trace"));
        }
        let sigma = crate::linalg::symmetrize(&sigma) * (p as f64 / tr);
        Self::assemble(mixing, sigma, tau, r_w, n)
    }

    /// Same context with a known location (`κ = 0`).
    pub fn with_known_mean(mut self) -> Self {
        self.median_estimated = false;
        self
    }

    /// Same context with a different `τ`; `Σ` is recomputed from `A`.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.mixing.clone(), tau, self.r_w, self.n)
            .map(|c| Self { median_estimated: self.median_estimated, ..c })
    }

    pub fn spectral_model(&self) -> SpectralModel {
        SpectralModel { c: self.c_n, h: self.h_p.clone() }
    }

    pub fn sigma_eigen_range(&self) -> (f64, f64) {
        (self.h_p.min_value(), self.h_p.max_value())
    }

    /// `h_p(u)`, `u` off the spectrum of `Σ`.
    pub fn h_p(&self, u: Complex64) -> Complex64 {
        self.hadamard.h(u, self.p as f64)
    }

    /// `g_p(u, v)`.
    pub fn g_p(&self, u: Complex64, v: Complex64) -> Complex64 {
        self.hadamard.g(u, v, self.p as f64)
    }

    fn assemble(mixing: Mixing, sigma: DMatrix<f64>, tau: f64, r_w: f64, n: usize) -> Result<Self> {
        let p = mixing.p();
        if n < 2 {
            return Err(SscmError::invalid("n must be at least 2"));
        }
        if !(r_w >= 1.0 - 1e-12) || !r_w.is_finite() {
            return Err(SscmError::invalid(format!("r_w = {r_w} must be at least 1")));
        }
        if !(tau >= 1.0) || !tau.is_finite() {
            return Err(SscmError::invalid(format!("tau = {tau} must be at least 1")));
        }
        let pf = p as f64;
        let gram = mixing.gram_diagonal();
        let zeta_p = gram.iter().map(|g| g * g).sum::<f64>() / pf;
        let (values, w) = sigma_projection(&mixing, &sigma);
        let hadamard = group_hadamard(&values, &w, &gram);
        if hadamard.lambdas[0] < 0.0 {
            return Err(SscmError::invalid(format!(
                "sigma has a negative eigenvalue {}",
                hadamard.lambdas[0]
            )));
        }
        let counts = group_counts(&values);
        let h_p = DiscreteMeasure::normalized(
            hadamard.lambdas.iter().zip(&counts).map(|(&l, &k)| (l.max(0.0), k as f64)).collect(),
        )?;
        let trace_sigma2_over_p = values.iter().map(|v| v * v).sum::<f64>() / pf;
        Ok(Self {
            n,
            p,
            c_n: pf / n as f64,
            tau,
            r_w,
            mixing,
            sigma,
            h_p,
            trace_sigma2_over_p,
            zeta_p,
            median_estimated: true,
            hadamard,
        })
    }
}

fn normalize_mixing(mixing: Mixing) -> Result<Mixing> {
    let p = mixing.p();
    if p == 0 {
        return Err(SscmError::invalid("mixing matrix is empty"));
    }
    if let Mixing::Dense(a) = &mixing {
        if a.ncols() != p {
            return Err(SscmError::invalid("mixing matrix must be square"));
        }
    }
    let gram = mixing.gram_diagonal();
    let tr: f64 = gram.iter().sum();
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(SscmError::invalid("mixing matrix must be finite and nonzero"));
    }
    Ok(mixing.scaled((p as f64 / tr).sqrt()))
}

/// Ascending eigenvalues of `Σ` and `W = V'A` (row `k` pairs with value `k`).
fn sigma_projection(mixing: &Mixing, sigma: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let p = sigma.nrows();
    let sigma_is_diagonal = (0..p).all(|j| (0..p).all(|i| i == j || sigma[(i, j)] == 0.0));
    if let (Mixing::Diagonal(d), true) = (mixing, sigma_is_diagonal) {
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| sigma[(i, i)].total_cmp(&sigma[(j, j)]));
        let values = order.iter().map(|&i| sigma[(i, i)]).collect();
        let mut w = DMatrix::zeros(p, p);
        for (k, &i) in order.iter().enumerate() {
            w[(k, i)] = d[i];
        }
        return (values, w);
    }
    let (values, vectors) = sym_eigen_ascending(sigma);
    let w = vectors.transpose() * mixing.to_dense();
    (values.iter().copied().collect(), w)
}

/// Start index of each run of numerically equal ascending values.
fn group_starts(values: &[f64]) -> Vec<usize> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut starts = vec![0];
    for k in 1..values.len() {
        if values[k] - values[k - 1] > GROUP_TOL * scale {
            starts.push(k);
        }
    }
    starts
}

fn group_counts(values: &[f64]) -> Vec<usize> {
    let starts = group_starts(values);
    starts
        .iter()
        .enumerate()
        .map(|(g, &s)| starts.get(g + 1).copied().unwrap_or(values.len()) - s)
        .collect()
}

fn group_hadamard(values: &[f64], w: &DMatrix<f64>, gram: &[f64]) -> HadamardParts {
    let p = values.len();
    let starts = group_starts(values);
    let k = starts.len();
    let mut lambdas = Vec::with_capacity(k);
    // d[(g, i)] = Σ_{k in g} W_ki²
    let mut d = DMatrix::<f64>::zeros(k, p);
    for g in 0..k {
        let end = starts.get(g + 1).copied().unwrap_or(p);
        let members = starts[g]..end;
        lambdas.push(values[members.clone()].iter().sum::<f64>() / members.len() as f64);
        for row in members {
            for i in 0..p {
                d[(g, i)] += w[(row, i)] * w[(row, i)];
            }
        }
    }
    let q = (0..k).map(|g| (0..p).map(|i| d[(g, i)] * gram[i]).sum()).collect();
    let pmat = &d * d.transpose();
    HadamardParts { lambdas, q, pmat }
}

/// `ζ_p`, `h_p(z)` and `g_p(z, z2)` computed directly from dense complex
/// resolvents of `Σ`.
pub fn aux_quantities(
    a: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    z: Complex64,
    z2: Complex64,
) -> Result<(f64, Complex64, Complex64)> {
    let p = a.nrows();
    if a.ncols() != p || sigma.nrows() != p || sigma.ncols() != p {
        return Err(SscmError::invalid("A and sigma must be square of equal size"));
    }
    let pf = p as f64;
    let ac = a.map(|x| Complex64::new(x, 0.0));
    let gram = a.transpose() * a;
    let zeta: f64 = (0..p).map(|i| gram[(i, i)].powi(2)).sum::<f64>() / pf;
    let resolvent_sandwich = |w: Complex64| -> Result<DMatrix<Complex64>> {
        let shifted = DMatrix::from_fn(p, p, |i, j| {
            Complex64::new(sigma[(i, j)], 0.0) - if i == j { w } else { Complex64::new(0.0, 0.0) }
        });
        let inv = shifted
            .try_inverse()
            .ok_or_else(|| SscmError::invalid(format!("sigma - zI is singular at z = {w}")))?;
        Ok(ac.transpose() * inv * &ac)
    };
    let r1 = resolvent_sandwich(z)?;
    let r2 = resolvent_sandwich(z2)?;
    // tr(X ∘ Y) = Σ_i X_ii Y_ii
    let h: Complex64 = (0..p).map(|i| r1[(i, i)] * gram[(i, i)]).sum();
    let g: Complex64 = (0..p).map(|i| r1[(i, i)] * r2[(i, i)]).sum();
    Ok((zeta, h / pf, g / pf))
}
