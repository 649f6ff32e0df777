//! Robust sphericity tests based on the SSCM, calibrated by the normal
//! limits of `tr(B_n²)` and `tr(B_n) - log|B_n|`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscmError};
use crate::linalg::sym_eigenvalues_ascending;
use crate::sign_geometry::SscmMatrix;
use crate::stats::std_normal_cdf;

/// Below this aspect ratio the KL statistic's variance `-2log(1-c) - 2c`
/// is too small to standardize reliably.
pub const KL_MIN_ASPECT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphericityTest {
    /// Two-sided test on `tr(B²)`.
    Frobenius,
    /// Upper one-sided test on `tr(B) - log|B|`, `p < n` only.
    KullbackLeibler,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RwSource {
    Supplied,
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub test: SphericityTest,
    /// Standardized statistic, asymptotically N(0, 1) under the null.
    pub statistic: f64,
    pub p_value: f64,
    /// `tr(B²)` for Frobenius, `tr(B) - log|B|` for KL.
    pub raw: f64,
    /// `κ₁` or `κ₂`.
    pub kappa: f64,
    pub c_n: f64,
    pub p: usize,
    pub n: usize,
    pub r_w_used: f64,
    pub r_w_source: RwSource,
}

impl TestReport {
    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

fn check_inputs(b: &SscmMatrix, n: usize, r_w: f64) -> Result<()> {
    if !b.scaled {
        return Err(SscmError::invalid("sphericity tests need the scaled SSCM (trace p)"));
    }
    if n < 2 {
        return Err(SscmError::invalid("n must be at least 2"));
    }
    if !r_w.is_finite() || r_w < 1.0 - 1e-12 {
        return Err(SscmError::invalid(format!("r_w = {r_w} must be at least 1")));
    }
    Ok(())
}

/// `κ₁ = c (r_w² - 2 r_w + 2)`.
pub fn kappa1(c: f64, r_w: f64) -> f64 {
    c * (r_w * r_w - 2.0 * r_w + 2.0)
}

/// `κ₂ = c (r_w - 2) - log(1 - c) - log(1 + c (r_w - 1))`.
pub fn kappa2(c: f64, r_w: f64) -> f64 {
    c * (r_w - 2.0) - (1.0 - c).ln() - (1.0 + c * (r_w - 1.0)).ln()
}

/// `[tr(B²) - p(1 + c) - c(κ₁ - 1)] / (2c)`, two-sided normal p-value.
pub fn frobenius_sphericity_test(b: &SscmMatrix, n: usize, r_w: f64, source: RwSource) -> Result<TestReport> {
    check_inputs(b, n, r_w)?;
    let p = b.p();
    let c = p as f64 / n as f64;
    let k1 = kappa1(c, r_w);
    let raw = b.matrix.norm_squared();
    let statistic = (raw - p as f64 * (1.0 + c) - c * (k1 - 1.0)) / (2.0 * c);
    let p_value = (2.0 * (1.0 - std_normal_cdf(statistic.abs()))).clamp(0.0, 1.0);
    Ok(TestReport {
        test: SphericityTest::Frobenius,
        statistic,
        p_value,
        raw,
        kappa: k1,
        c_n: c,
        p,
        n,
        r_w_used: r_w,
        r_w_source: source,
    })
}

/// `[tr B - log|B| - 2p + (p - n + 1/2) log(1 - c) - κ₂ + c] / sqrt(-2 log(1 - c) - 2c)`,
/// upper one-sided normal p-value.
pub fn kl_sphericity_test(b: &SscmMatrix, n: usize, r_w: f64, source: RwSource) -> Result<TestReport> {
    check_inputs(b, n, r_w)?;
    let p = b.p();
    if p >= n {
        return Err(SscmError::unsupported(format!(
            "the KL sphericity test needs p < n (p = {p}, n = {n})"
        )));
    }
    let c = p as f64 / n as f64;
    if c < KL_MIN_ASPECT {
        return Err(SscmError::unsupported(format!(
            "c = {c} is below {KL_MIN_ASPECT}; the KL statistic is ill-conditioned"
        )));
    }
    let eigs = sym_eigenvalues_ascending(&b.matrix);
    if eigs[0] <= 1e-12 {
        return Err(SscmError::invalid(format!(
            "B is numerically singular (smallest eigenvalue {:e})",
            eigs[0]
        )));
    }
    let log_det: f64 = eigs.iter().map(|v| v.ln()).sum();
    let raw = b.matrix.trace() - log_det;
    let k2 = kappa2(c, r_w);
    let (pf, nf) = (p as f64, n as f64);
    let centered = raw - 2.0 * pf + (pf - nf + 0.5) * (1.0 - c).ln() - k2 + c;
    let statistic = centered / (-2.0 * (1.0 - c).ln() - 2.0 * c).sqrt();
    let p_value = (1.0 - std_normal_cdf(statistic)).clamp(0.0, 1.0);
    Ok(TestReport {
        test: SphericityTest::KullbackLeibler,
        statistic,
        p_value,
        raw,
        kappa: k2,
        c_n: c,
        p,
        n,
        r_w_used: r_w,
        r_w_source: source,
    })
}

pub fn sphericity_test(
    test: SphericityTest,
    b: &SscmMatrix,
    n: usize,
    r_w: f64,
    source: RwSource,
) -> Result<TestReport> {
    match test {
        SphericityTest::Frobenius => frobenius_sphericity_test(b, n, r_w, source),
        SphericityTest::KullbackLeibler => kl_sphericity_test(b, n, r_w, source),
    }
}
