//! Spatial signs, the sample spatial median and the sample spatial-sign
//! covariance matrix (SSCM).

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SscmError};

/// Distance below which an iterate is treated as sitting on a data point.
const ANCHOR_EPS: f64 = 1e-12;

/// `n` observations of dimension `p`, one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    data: DMatrix<f64>,
}

impl SampleBatch {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(SscmError::invalid(format!(
                "need at least 2 observations, got {}",
                data.nrows()
            )));
        }
        if data.ncols() < 1 {
            return Err(SscmError::invalid("dimension p must be at least 1"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SscmError::invalid("sample contains non-finite entries"));
        }
        Ok(Self { data })
    }

    /// Builds a batch from row-major observations.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(SscmError::invalid("ragged rows"));
        }
        Self::new(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    /// Observation `j` as a column vector.
    pub fn observation(&self, j: usize) -> DVector<f64> {
        self.data.row(j).transpose()
    }

    /// Rows shifted by `-center`.
    pub fn centered(&self, center: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.data.clone();
        for mut row in out.row_iter_mut() {
            row -= center.transpose();
        }
        out
    }

    /// Reads a CSV file with one observation per row.
    pub fn read_csv(path: impl AsRef<Path>, header: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv_from(file, header)
    }

    pub fn read_csv_from(reader: impl Read, header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(header)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| SscmError::invalid(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_matrix_csv(&self.data, path)
    }
}

/// Writes a dense matrix as headerless CSV, one row per line.
pub fn write_matrix_csv(m: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in m.row_iter() {
        wtr.write_record(row.iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a headerless CSV matrix (e.g. a reference shape matrix).
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    Ok(SampleBatch::read_csv(path, false)?.into_data())
}

/// `v / |v|`, or the zero vector when `v = 0`.
pub fn spatial_sign(v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(SscmError::invalid("spatial_sign of non-finite vector"));
    }
    let norm = v.norm();
    if norm == 0.0 {
        Ok(DVector::zeros(v.len()))
    } else {
        Ok(v / norm)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialMedianResult {
    pub median: Vec<f64>,
    pub iterations: usize,
    /// `| n^-1 sum_j s(x_j - median) |`.
    pub residual_norm: f64,
    /// `sum_j |x_j - mu|` at every iterate, starting from the mean.
    pub objective_trace: Vec<f64>,
}

/// `sum_j |x_j - mu|`.
pub fn median_objective(x: &SampleBatch, mu: &DVector<f64>) -> f64 {
    x.data
        .row_iter()
        .map(|row| (row.transpose() - mu).norm())
        .sum()
}

/// Norm of the mean spatial sign of the rows of `x` around `mu`.
pub fn sign_residual(x: &SampleBatch, mu: &DVector<f64>) -> f64 {
    let mut acc = DVector::zeros(x.p());
    for row in x.data.row_iter() {
        let d = row.transpose() - mu;
        let norm = d.norm();
        if norm > 0.0 {
            acc += d / norm;
        }
    }
    acc.norm() / x.n() as f64
}

/// Sample spatial median by the modified Weiszfeld iteration (Vardi-Zhang
/// anchor correction when an iterate hits a data point).
pub fn spatial_median(x: &SampleBatch, tol: f64, max_iter: usize) -> Result<SpatialMedianResult> {
    let n = x.n();
    let p = x.p();
    let first = x.data.row(0);
    if x.data.row_iter().all(|r| r == first) {
        return Err(SscmError::invalid("all observations are identical"));
    }

    let mut mu: DVector<f64> = x.data.row_sum().transpose() / n as f64;
    let mut residual = f64::INFINITY;
    let mut objective_trace = Vec::new();

    for iter in 0..=max_iter {
        let mut objective = 0.0;
        // Weighted sums with anchor bookkeeping.
        let mut num = DVector::zeros(p);
        let mut den = 0.0;
        let mut sign_sum = DVector::zeros(p);
        let mut anchored = 0usize;
        let mut anchor = None;
        for row in x.data.row_iter() {
            let d = row.transpose() - &mu;
            let dist = d.norm();
            objective += dist;
            if dist <= ANCHOR_EPS {
                anchored += 1;
                anchor = Some(row.transpose());
                continue;
            }
            num += row.transpose() / dist;
            den += 1.0 / dist;
            sign_sum += d / dist;
        }
        objective_trace.push(objective);
        let r = sign_sum.norm();
        // At a data point the first-order condition is |sum of other signs| <= multiplicity.
        residual = if anchored > 0 {
            (r - anchored as f64).max(0.0) / n as f64
        } else {
            r / n as f64
        };
        if residual <= tol {
            // Land exactly on the data point so its spatial sign is zero.
            if let Some(a) = anchor {
                mu = a;
            }
            return Ok(SpatialMedianResult {
                median: mu.iter().copied().collect(),
                iterations: iter,
                residual_norm: residual,
                objective_trace,
            });
        }
        if iter == max_iter {
            break;
        }
        let target = num / den;
        mu = if anchored > 0 {
            let eta = anchored as f64;
            let lambda = (eta / r).min(1.0);
            target * (1.0 - lambda) + &mu * lambda
        } else {
            target
        };
    }

    Err(SscmError::ConvergenceFailure {
        context: "spatial median",
        iterations: max_iter,
        residual,
        last_iterate: Some(mu.iter().copied().collect()),
    })
}

pub const DEFAULT_MEDIAN_TOL: f64 = 1e-10;
pub const DEFAULT_MEDIAN_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CenteredBy {
    SampleSpatialMedian,
    KnownMean,
}

/// Location used to center the sample before taking spatial signs.
#[derive(Debug, Clone, PartialEq)]
pub enum Center {
    EstimateMedian,
    Known(DVector<f64>),
}

/// A sample SSCM together with how it was built.
#[derive(Debug, Clone)]
pub struct SscmMatrix {
    pub matrix: DMatrix<f64>,
    /// Whether the `p/n` factor is applied (always true for [`sscm`]).
    pub scaled: bool,
    pub centered_by: CenteredBy,
    pub center: Vec<f64>,
    /// Observations equal to the center; they contribute a zero sign.
    pub degenerate_rows: usize,
    pub n: usize,
}

impl SscmMatrix {
    pub fn p(&self) -> usize {
        self.matrix.nrows()
    }

    /// Wraps an externally computed scaled SSCM.
    pub fn from_matrix(matrix: DMatrix<f64>, n: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(SscmError::invalid("SSCM must be square"));
        }
        Ok(Self {
            center: vec![0.0; matrix.nrows()],
            matrix,
            scaled: true,
            centered_by: CenteredBy::KnownMean,
            degenerate_rows: 0,
            n,
        })
    }
}

/// Matrix of spatial signs, row `j` = `s(x_j - center)`; also returns the
/// number of zero rows.
pub fn sign_matrix(x: &SampleBatch, center: &DVector<f64>) -> (DMatrix<f64>, usize) {
    let mut signs = x.centered(center);
    let mut degenerate = 0;
    for mut row in signs.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        } else {
            degenerate += 1;
        }
    }
    (signs, degenerate)
}

/// `B = (p/n) sum_j s(x_j - center) s(x_j - center)'`.
pub fn sscm(x: &SampleBatch, center: &Center) -> Result<SscmMatrix> {
    let (center_vec, centered_by) = match center {
        Center::EstimateMedian => {
            let med = spatial_median(x, DEFAULT_MEDIAN_TOL, DEFAULT_MEDIAN_MAX_ITER)?;
            (DVector::from_vec(med.median), CenteredBy::SampleSpatialMedian)
        }
        Center::Known(mu) => {
            if mu.len() != x.p() {
                return Err(SscmError::invalid("center has wrong dimension"));
            }
            (mu.clone(), CenteredBy::KnownMean)
        }
    };
    let (signs, degenerate_rows) = sign_matrix(x, &center_vec);
    let scale = x.p() as f64 / x.n() as f64;
    let matrix = crate::linalg::symmetrize(&(signs.transpose() * &signs * scale));
    Ok(SscmMatrix {
        matrix,
        scaled: true,
        centered_by,
        center: center_vec.iter().copied().collect(),
        degenerate_rows,
        n: x.n(),
    })
}

/// Plug-in estimate of `r_w = E(w^-2) / E(w^-1)^2` from the radii
/// `|x_j - center| / sqrt(p)`.
pub fn estimate_rw(x: &SampleBatch, center: &DVector<f64>) -> Result<f64> {
    let sqrt_p = (x.p() as f64).sqrt();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for row in x.data.row_iter() {
        let dist = (row.transpose() - center).norm();
        if dist == 0.0 {
            return Err(SscmError::invalid(
                "observation coincides with the center; r_w undefined",
            ));
        }
        let inv = sqrt_p / dist;
        s1 += inv;
        s2 += inv * inv;
    }
    let n = x.n() as f64;
    Ok((s2 / n) / (s1 / n).powi(2))
}
