//! Data generators for the five simulation models, the normalized
//! `(β̂₂, β̂₃)` QQ experiment and the shape-estimator Frobenius benchmark.
//!
//! Randomness comes from ChaCha8 keyed by the run seed; replicate `j` reads
//! substream `j + 1` and substream 0 is reserved for fixed model
//! ingredients (Model 2's spike direction), so results do not depend on the
//! number of worker threads.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp1, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SscmError};
use crate::lss_clt::{beta_centering, beta_moments_normal, Mixing, NormalApprox, ShapeContext};
use crate::shape_estimation::{estimate_shape, EstimatorKind, ShapeOptions};
use crate::sign_geometry::{sscm, Center, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    M1,
    M2,
    M3,
    M4,
    M5,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId::M1, ModelId::M2, ModelId::M3, ModelId::M4, ModelId::M5];

    fn halves(self) -> bool {
        matches!(self, ModelId::M3 | ModelId::M4 | ModelId::M5)
    }

    fn contaminated(self) -> bool {
        matches!(self, ModelId::M4 | ModelId::M5)
    }

    /// Fourth moment `τ` of the standardized innovations.
    pub fn tau(self) -> f64 {
        match self {
            ModelId::M1 => 9.0,
            ModelId::M3 => 4.2,
            _ => 3.0,
        }
    }

    /// `r_w = E(w⁻²) / E(w⁻¹)²` of the radial variable.
    pub fn r_w(self) -> f64 {
        match self {
            ModelId::M2 => 13.0 / 9.0,
            ModelId::M3 => 1.2,
            _ => 1.0,
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelId {
    type Err = SscmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" | "1" => Ok(ModelId::M1),
            "M2" | "2" => Ok(ModelId::M2),
            "M3" | "3" => Ok(ModelId::M3),
            "M4" | "4" => Ok(ModelId::M4),
            "M5" | "5" => Ok(ModelId::M5),
            _ => Err(SscmError::invalid(format!("unknown model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub p: usize,
    pub n: usize,
    /// Contamination fraction, Models 4 and 5 only.
    pub epsilon: f64,
    pub seed: u64,
}

impl ModelSpec {
    /// Full-size dimensions: M1 (400, 200), M2 (400, 800), M3 (400, 400),
    /// M4/M5 (80, 100) with `ε = 0.01`.
    pub fn full(id: ModelId, seed: u64) -> Self {
        let (p, n, epsilon) = match id {
            ModelId::M1 => (400, 200, 0.0),
            ModelId::M2 => (400, 800, 0.0),
            ModelId::M3 => (400, 400, 0.0),
            ModelId::M4 | ModelId::M5 => (80, 100, 0.01),
        };
        Self { id, p, n, epsilon, seed }
    }

    /// Half-size `(p, n)` for Models 1–3; Models 4 and 5 are unchanged.
    pub fn desk(id: ModelId, seed: u64) -> Self {
        let full = Self::full(id, seed);
        if id.contaminated() {
            full
        } else {
            Self { p: full.p / 2, n: full.n / 2, ..full }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n < 2 {
            return Err(SscmError::invalid(format!("need p >= 1 and n >= 2, got ({}, {})", self.p, self.n)));
        }
        if self.id.halves() && !self.p.is_multiple_of(2) {
            return Err(SscmError::invalid(format!("{} splits p in halves; p = {} is odd", self.id, self.p)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SscmError::invalid(format!("epsilon = {} must lie in [0, 1)", self.epsilon)));
        }
        if !self.id.contaminated() && self.epsilon != 0.0 {
            return Err(SscmError::invalid(format!("{} has no contamination parameter", self.id)));
        }
        Ok(())
    }

    /// Number of outlying rows, `⌊n ε⌋`.
    pub fn outliers(&self) -> usize {
        (self.n as f64 * self.epsilon + 1e-9).floor() as usize
    }
}

fn half_split(p: usize, low: f64, high: f64) -> Vec<f64> {
    (0..p).map(|i| if i < p / 2 { low } else { high }).collect()
}

/// A model with its fixed ingredients drawn: shape matrix `T`, mixing
/// `A = T^{1/2}` and, for Model 5, the outlier mixing.
#[derive(Debug, Clone)]
pub struct Population {
    pub spec: ModelSpec,
    pub mixing: Mixing,
    outlier_mixing: Option<Vec<f64>>,
}

impl Population {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.p;
        let mixing = match spec.id {
            ModelId::M1 => Mixing::Diagonal(vec![1.0; p]),
            ModelId::M2 => {
                let mut rng = substream(spec.seed, 0);
                let v = loop {
                    let g = DVector::<f64>::from_fn(p, |_, _| rng.sample(StandardNormal));
                    let norm = g.norm();
                    if norm > 0.0 {
                        break g / norm;
                    }
                };
                // (I + vv')^{1/2} = I + (√2 - 1) vv'
                let root = DMatrix::identity(p, p) + &v * v.transpose() * (2f64.sqrt() - 1.0);
                Mixing::Dense(root / (1.0 + 1.0 / p as f64).sqrt())
            }
            ModelId::M3 | ModelId::M4 | ModelId::M5 => {
                Mixing::Diagonal(half_split(p, 0.5f64.sqrt(), 1.5f64.sqrt()))
            }
        };
        let outlier_mixing = match spec.id {
            ModelId::M4 => Some(half_split(p, 4.0 * 0.5f64.sqrt(), 4.0 * 1.5f64.sqrt())),
            ModelId::M5 => Some(half_split(p, 4.0 * 1.5f64.sqrt(), 4.0 * 0.5f64.sqrt())),
            _ => None,
        };
        Ok(Self { spec, mixing, outlier_mixing })
    }

    /// Population shape matrix `T`, trace `p`.
    pub fn shape_matrix(&self) -> DMatrix<f64> {
        self.mixing.shape_matrix()
    }

    /// CLT context for `B_n` with estimated spatial median.
    pub fn clt_context(&self) -> Result<ShapeContext> {
        if self.spec.id.contaminated() {
            return Err(SscmError::unsupported("contaminated models have no CLT context"));
        }
        ShapeContext::new(self.mixing.clone(), self.spec.id.tau(), self.spec.id.r_w(), self.spec.n)
    }

    /// Replicate `rep` of the model, `x_j = w_j A z_j` (or the contaminated
    /// normal mixture for Models 4 and 5, outliers in the last rows).
    pub fn sample(&self, rep: u64) -> SampleBatch {
        let (n, p) = (self.spec.n, self.spec.p);
        let mut rng = substream(self.spec.seed, rep + 1);
        let id = self.spec.id;
        let clean = n - self.spec.outliers();
        let mut z = DMatrix::<f64>::zeros(n, p);
        let mut w = vec![1.0; n];
        for j in 0..n {
            for i in 0..p {
                z[(j, i)] = innovation(id, &mut rng);
            }
            w[j] = radial(id, &mut rng);
        }
        let mut x = match &self.mixing {
            Mixing::Diagonal(d) => {
                let mut x = z.clone();
                for (i, mut col) in x.column_iter_mut().enumerate() {
                    col *= d[i];
                }
                x
            }
            Mixing::Dense(a) => &z * a.transpose(),
        };
        if let Some(big) = &self.outlier_mixing {
            for j in clean..n {
                for i in 0..p {
                    x[(j, i)] = z[(j, i)] * big[i];
                }
            }
        }
        for (j, mut row) in x.row_iter_mut().enumerate() {
            row *= w[j];
        }
        SampleBatch::new(x).expect("finite simulated data")
    }
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standardized coordinate `z_ij` of the model.
pub fn innovation<R: Rng + ?Sized>(id: ModelId, rng: &mut R) -> f64 {
    match id {
        ModelId::M1 => {
            // ½χ²₂ - 1
            let e: f64 = Exp1.sample(rng);
            e - 1.0
        }
        ModelId::M3 => {
            let g = Gamma::new(5.0, 0.5).expect("valid gamma");
            2.0 / 5f64.sqrt() * (g.sample(rng) - 2.5)
        }
        _ => rng.sample(StandardNormal),
    }
}

/// One radial variable `w_j` of the model.
pub fn radial<R: Rng + ?Sized>(id: ModelId, rng: &mut R) -> f64 {
    match id {
        ModelId::M2 => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                0.2
            }
        }
        ModelId::M3 => Beta::new(4.0, 2.0).expect("valid beta").sample(rng),
        _ => 1.0,
    }
}

/// First replicate of `spec`.
pub fn generate_sample(spec: &ModelSpec) -> Result<SampleBatch> {
    Ok(Population::new(*spec)?.sample(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub replications: usize,
    pub workers: usize,
    /// CSV destination; the manifest goes next to it as `*.manifest.json`.
    pub output_path: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(replications: usize) -> Self {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Self { replications, workers, output_path: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(SscmError::invalid("replications must be at least 1"));
        }
        if self.workers == 0 {
            return Err(SscmError::invalid("workers must be at least 1"));
        }
        Ok(())
    }

    fn run<T: Send>(&self, f: impl Fn(u64) -> T + Sync + Send) -> Result<Vec<T>> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| SscmError::numeric(e.to_string()))?;
        Ok(pool.install(|| (0..self.replications as u64).into_par_iter().map(f).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub replicate: usize,
    pub beta2_hat: f64,
    pub beta3_hat: f64,
    pub z2_normalized: f64,
    pub z3_normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QqTable {
    pub spec: ModelSpec,
    /// Normal approximation of `p(β̂₂ - β₂, β̂₃ - β₃)` used for `z`.
    pub normal: NormalApprox,
    pub centering: (f64, f64),
    pub rows: Vec<QqRow>,
}

impl QqTable {
    /// Recomputes the `z` columns with another approximation.
    pub fn restandardize(&self, normal: &NormalApprox, centering: (f64, f64)) -> Vec<[f64; 2]> {
        let p = self.spec.p as f64;
        self.rows
            .iter()
            .map(|r| {
                let z = normal.standardize(&[p * (r.beta2_hat - centering.0), p * (r.beta3_hat - centering.1)]);
                [z[0], z[1]]
            })
            .collect()
    }

    pub fn z2(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.z2_normalized).collect()
    }

    pub fn z3(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.z3_normalized).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["replicate", "beta2_hat", "beta3_hat", "z2_normalized", "z3_normalized"])?;
        for r in &self.rows {
            w.write_record([
                r.replicate.to_string(),
                r.beta2_hat.to_string(),
                r.beta3_hat.to_string(),
                r.z2_normalized.to_string(),
                r.z3_normalized.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(β̂₂, β̂₃) = (tr B²/p, tr B³/p)` for `B` centered at the sample spatial
/// median.
pub fn beta_hats(x: &SampleBatch) -> Result<(f64, f64)> {
    let b = sscm(x, &Center::EstimateMedian)?.matrix;
    let p = b.nrows() as f64;
    let b2 = &b * &b;
    let tr3: f64 = b2.iter().zip(b.iter()).map(|(u, v)| u * v).sum();
    Ok((b2.trace() / p, tr3 / p))
}

/// Monte Carlo of the normalized `β̂₂, β̂₃` for Models 1–3.
pub fn run_qq_experiment(spec: &ModelSpec, cfg: &RunConfig) -> Result<QqTable> {
    cfg.validate()?;
    if spec.id.contaminated() {
        return Err(SscmError::unsupported("the QQ experiment covers Models 1-3"));
    }
    let pop = Population::new(*spec)?;
    let ctx = pop.clt_context()?;
    let normal = beta_moments_normal(&ctx)?;
    let centering = beta_centering(&ctx);
    let p = spec.p as f64;
    let hats = cfg.run(|rep| beta_hats(&pop.sample(rep)))?;
    let rows = hats
        .into_iter()
        .enumerate()
        .map(|(replicate, h)| {
            let (b2, b3) = h?;
            let z = normal.standardize(&[p * (b2 - centering.0), p * (b3 - centering.1)]);
            Ok(QqRow { replicate, beta2_hat: b2, beta3_hat: b3, z2_normalized: z[0], z3_normalized: z[1] })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = QqTable { spec: *spec, normal, centering, rows };
    if let Some(path) = &cfg.output_path {
        table.write_csv(path)?;
        write_manifest(path, "qq", spec, cfg, &serde_json::json!({ "normal": table.normal, "centering": table.centering }))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkGrid {
    pub models: Vec<ModelId>,
    pub epsilons: Vec<f64>,
    pub ps: Vec<usize>,
    pub n: usize,
    pub seed: u64,
}

impl BenchmarkGrid {
    /// Both contaminated models, `ε ∈ {0, 0.01, 0.05}`,
    /// `p ∈ {2, 40, 80, 120, 160, 200}`, `n = 100`.
    pub fn full(seed: u64) -> Self {
        Self {
            models: vec![ModelId::M4, ModelId::M5],
            epsilons: vec![0.0, 0.01, 0.05],
            ps: vec![2, 40, 80, 120, 160, 200],
            n: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: ModelId,
    pub epsilon: f64,
    pub p: usize,
    /// 1-based estimator index.
    pub estimator: usize,
    /// Mean of `‖T̂ - T‖_F` over successful replicates (NaN if none).
    pub mean_frobenius: f64,
    pub standard_error: f64,
    pub successes: usize,
    pub failures: usize,
    pub first_error: Option<String>,
}

/// Averages `‖T̂_k - T‖_F` over replicates for every grid cell. Tyler-based
/// estimators are omitted when `p >= n`; estimator failures are counted per
/// cell. Every cell uses the grid seed, so replicate `j` shares its random
/// numbers across cells.
pub fn run_shape_benchmark(grid: &BenchmarkGrid, cfg: &RunConfig, opts: &ShapeOptions) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &model in &grid.models {
        if !model.contaminated() {
            return Err(SscmError::unsupported("the shape benchmark covers Models 4 and 5"));
        }
        for &epsilon in &grid.epsilons {
            for &p in &grid.ps {
                let spec = ModelSpec { id: model, p, n: grid.n, epsilon, seed: grid.seed };
                rows.extend(benchmark_cell(&spec, cfg, opts)?);
            }
        }
    }
    if let Some(path) = &cfg.output_path {
        write_benchmark_csv(&rows, path)?;
        write_manifest(path, "shape-benchmark", grid, cfg, &serde_json::json!({ "tau": opts.tau, "num_atoms": opts.num_atoms }))?;
    }
    Ok(rows)
}

fn benchmark_cell(spec: &ModelSpec, cfg: &RunConfig, opts: &ShapeOptions) -> Result<Vec<BenchmarkRow>> {
    let pop = Population::new(*spec)?;
    let truth = pop.shape_matrix();
    let kinds: Vec<EstimatorKind> = EstimatorKind::ALL
        .into_iter()
        .filter(|k| !(k.requires_p_below_n() && spec.p >= spec.n))
        .collect();
    let opts = ShapeOptions { reference: Some(truth), ..opts.clone() };
    let per_rep = cfg.run(|rep| {
        let x = pop.sample(rep);
        kinds
            .iter()
            .map(|&k| estimate_shape(&x, k, &opts).map(|r| r.frobenius_to.expect("reference set")))
            .collect::<Vec<_>>()
    })?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut ok = Vec::new();
            let mut first_error = None;
            for rep in &per_rep {
                match &rep[i] {
                    Ok(d) => ok.push(*d),
                    Err(e) => {
                        first_error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            let (mean_frobenius, standard_error) = if ok.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (crate::stats::mean(&ok), crate::stats::standard_error(&ok))
            };
            BenchmarkRow {
                model: spec.id,
                epsilon: spec.epsilon,
                p: spec.p,
                estimator: k.index(),
                mean_frobenius,
                standard_error,
                successes: ok.len(),
                failures: per_rep.len() - ok.len(),
                first_error,
            }
        })
        .collect())
}

pub fn write_benchmark_csv(rows: &[BenchmarkRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "epsilon", "p", "estimator", "mean_frobenius", "standard_error", "successes", "failures"])?;
    for r in rows {
        w.write_record([
            r.model.to_string(),
            r.epsilon.to_string(),
            r.p.to_string(),
            r.estimator.to_string(),
            r.mean_frobenius.to_string(),
            r.standard_error.to_string(),
            r.successes.to_string(),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `foo.csv` -> `foo.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

fn write_manifest(output: &Path, kind: &str, spec: &impl Serialize, cfg: &RunConfig, extra: &serde_json::Value) -> Result<()> {
    let manifest = serde_json::json!({
        "kind": kind,
        "spec": spec,
        "replications": cfg.replications,
        "workers": cfg.workers,
        "output": output,
        "generator": "ChaCha8, substream = replicate + 1",
        "version": env!("CARGO_PKG_VERSION"),
        "details": extra,
    });
    std::fs::write(manifest_path(output), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests;
