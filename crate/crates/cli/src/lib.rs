//! Command-line front end for the `sscm` library.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 when a numeric
//! routine fails to converge.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use sscm::lss_clt::{
    beta_centering, beta_moments_normal, lss_normal_approx, ContourSpec, Mixing, ShapeContext, TestFunction,
};
use sscm::mp_law::{solve_stieltjes, DiscreteMeasure, SpectralModel};
use sscm::shape_estimation::{estimate_shape, EstimatorKind, ShapeOptions};
use sscm::sign_geometry::{
    estimate_rw, read_matrix_csv, spatial_median, sscm as sample_sscm, write_matrix_csv, Center, SampleBatch,
    DEFAULT_MEDIAN_MAX_ITER, DEFAULT_MEDIAN_TOL,
};
use sscm::simulation::{
    run_qq_experiment, run_shape_benchmark, BenchmarkGrid, ModelId, ModelSpec, RunConfig,
};
use sscm::sphericity::{sphericity_test, RwSource, SphericityTest};
use sscm::SscmError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "sscm", version, about = "Spectral tools for the spatial-sign covariance matrix")]
pub struct Cli {
    /// JSON object of flag values; explicit flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stieltjes transforms of the generalized Marčenko–Pastur law.
    MpSolve(MpSolveArgs),
    /// Normal approximation of p(β̂₂ - β₂, β̂₃ - β₃).
    CltMoments(CltArgs),
    /// Robust sphericity test on a data file.
    Sphericity(SphericityArgs),
    /// Shape-matrix estimate from a data file.
    ShapeEstimate(ShapeArgs),
    /// Monte Carlo experiments for the simulation models.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct MpSolveArgs {
    /// Aspect ratio p/n.
    #[arg(long)]
    pub c: f64,
    /// Population spectral distribution as `[[value, weight], ...]`.
    #[arg(long = "H")]
    pub h: String,
    /// Evaluation points in `a+bi` form.
    #[arg(long, required = true, num_args = 1.., allow_negative_numbers = true)]
    pub z: Vec<String>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CltMethod {
    ClosedForm,
    Contour,
}

#[derive(Debug, Args, Serialize)]
pub struct CltArgs {
    /// Diagonal of the shape matrix T as a JSON list (A = T^{1/2}).
    #[arg(long, conflicts_with = "mixing")]
    pub shape_eigs: Option<String>,
    /// Headerless CSV with a dense mixing matrix A.
    #[arg(long)]
    pub mixing: Option<PathBuf>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 3.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rw: f64,
    /// Location known (B_n⁰ instead of B_n).
    #[arg(long)]
    pub known_mean: bool,
    #[arg(long, value_enum, default_value_t = CltMethod::ClosedForm)]
    pub method: CltMethod,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestArg {
    Frobenius,
    Kl,
}

#[derive(Debug, Args, Serialize)]
pub struct SphericityArgs {
    /// CSV with one observation per row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long, value_enum)]
    pub test: TestArg,
    /// r_w; estimated from the data when omitted.
    #[arg(long)]
    pub rw: Option<f64>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeCenter {
    /// The data are already centered at zero.
    Known,
    /// Subtract the sample spatial median first.
    SpatialMedian,
}

#[derive(Debug, Args, Serialize)]
pub struct ShapeArgs {
    /// CSV with one observation per row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub header: bool,
    #[arg(long, value_enum, default_value = "known")]
    pub center: ShapeCenter,
    /// Estimator index 1-6.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=6))]
    pub estimator: u8,
    #[arg(long, default_value_t = 3.0)]
    pub tau: f64,
    /// Atom count for the moment method (1-3); chosen automatically if omitted.
    #[arg(long)]
    pub atoms: Option<usize>,
    /// Headerless CSV reference shape matrix for the Frobenius distance.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Iteration cap for Tyler's M-estimator.
    #[arg(long, default_value_t = sscm::shape_estimation::DEFAULT_TYLER_MAX_ITER)]
    pub tyler_max_iter: usize,
    /// Writes the estimated matrix as headerless CSV.
    #[arg(long)]
    pub matrix_out: Option<PathBuf>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// M1-M3 run the QQ experiment, M4/M5 the shape benchmark.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, env = "SSCM_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Dimension (QQ); defaults to the half-size model.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Full-size dimensions for Models 1-3.
    #[arg(long)]
    pub full: bool,
    /// Benchmark dimensions as a JSON list.
    #[arg(long)]
    pub ps: Option<String>,
    /// Benchmark contamination levels as a JSON list.
    #[arg(long)]
    pub epsilons: Option<String>,
    /// CSV destination (defaults to `<model>_seed<seed>.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Output {
    /// Writes the JSON result here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(SscmError),
}

impl From<SscmError> for CliError {
    fn from(e: SscmError) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

struct Streams<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the exit code. Data goes to `out`, diagnostics to `err`.
pub fn dispatch<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => return report(e, err),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match run(cli, &mut Streams { out, err }) {
        Ok(()) => EXIT_OK,
        Err(e) => report(e, err),
    }
}

fn report(e: CliError, err: &mut dyn Write) -> i32 {
    match e {
        CliError::Usage(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        CliError::Lib(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_USAGE
            }
        }
    }
}

/// Appends `--key value` for every config entry whose flag is not already
/// on the command line. Arrays and objects are passed as JSON text.
fn merge_config(mut argv: Vec<String>) -> CliResult<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => argv.get(pos + 1).cloned().ok_or_else(|| usage("--config needs a path"))?,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {path}: {e}")))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| usage(format!("config {path} is not JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(usage("config must be a JSON object"));
    };
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let given = argv.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match v {
            Value::Bool(true) => argv.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => argv.extend([flag, s]),
            Value::Number(n) => argv.extend([flag, n.to_string()]),
            Value::Array(items) if key == "z" => {
                argv.push(flag);
                for item in items {
                    argv.push(item.as_str().map(str::to_string).unwrap_or_else(|| item.to_string()));
                }
            }
            other => argv.extend([flag, other.to_string()]),
        }
    }
    Ok(argv)
}

fn run(cli: Cli, io: &mut Streams) -> CliResult<()> {
    match cli.command {
        Command::MpSolve(a) => mp_solve(a, io),
        Command::CltMoments(a) => clt_moments(a, io),
        Command::Sphericity(a) => sphericity(a, io),
        Command::ShapeEstimate(a) => shape_estimate(a, io),
        Command::Simulate(a) => simulate(a, io),
    }
}

/// Parses `[[value, weight], ...]` or `{"atoms": [...]}`.
pub fn parse_measure(text: &str) -> Result<DiscreteMeasure, String> {
    if let Ok(atoms) = serde_json::from_str::<Vec<(f64, f64)>>(text) {
        return DiscreteMeasure::new(atoms).map_err(|e| e.to_string());
    }
    serde_json::from_str::<DiscreteMeasure>(text).map_err(|e| format!("bad measure {text:?}: {e}"))
}

/// Parses `a+bi`, `a-bi`, `a` or `bi`.
pub fn parse_complex(text: &str) -> Result<Complex64, String> {
    text.trim().parse::<Complex64>().map_err(|e| format!("bad complex number {text:?}: {e:?}"))
}

fn parse_json_list<T: serde::de::DeserializeOwned>(flag: &str, text: &str) -> CliResult<Vec<T>> {
    serde_json::from_str(text).map_err(|e| usage(format!("--{flag} must be a JSON list: {e}")))
}

/// Writes `result` to `--output` (plus a manifest beside it) or to `out`
/// (manifest to standard error).
fn emit(result: &impl Serialize, manifest: Value, dest: &Output, io: &mut Streams) -> CliResult<()> {
    let text = serde_json::to_string_pretty(result)?;
    match &dest.output {
        Some(path) => {
            std::fs::write(path, format!("{text}\n"))?;
            write_manifest(path, &manifest)?;
        }
        None => {
            writeln!(io.out, "{text}")?;
            writeln!(io.err, "{}", serde_json::to_string(&manifest)?)?;
        }
    }
    Ok(())
}

fn write_manifest(path: &Path, manifest: &Value) -> CliResult<()> {
    let target = path.with_extension("manifest.json");
    std::fs::write(target, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

fn manifest(command: &str, args: &impl Serialize) -> CliResult<Value> {
    Ok(json!({
        "command": command,
        "config": serde_json::to_value(args)?,
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

fn mp_solve(a: MpSolveArgs, io: &mut Streams) -> CliResult<()> {
    let h = parse_measure(&a.h).map_err(usage)?;
    let model = SpectralModel::new(a.c, h)?;
    let zs = a.z.iter().map(|s| parse_complex(s).map_err(usage)).collect::<CliResult<Vec<_>>>()?;
    let pairs = zs.into_iter().map(|z| solve_stieltjes(&model, z)).collect::<Result<Vec<_>, _>>()?;
    let m = manifest("mp-solve", &a)?;
    if pairs.len() == 1 {
        emit(&pairs[0], m, &a.out, io)
    } else {
        emit(&pairs, m, &a.out, io)
    }
}

#[derive(Serialize)]
struct CltReport {
    p: usize,
    n: usize,
    c_n: f64,
    /// `(β₂, β₃)` under `F^{c_n, H_p}`.
    centering: (f64, f64),
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
}

fn clt_moments(a: CltArgs, io: &mut Streams) -> CliResult<()> {
    let mixing = match (&a.shape_eigs, &a.mixing) {
        (Some(s), None) => {
            let t: Vec<f64> = parse_json_list("shape-eigs", s)?;
            if t.iter().any(|v| !(*v >= 0.0)) {
                return Err(usage("--shape-eigs must be nonnegative"));
            }
            Mixing::Diagonal(t.iter().map(|v| v.sqrt()).collect())
        }
        (None, Some(path)) => Mixing::Dense(read_matrix_csv(path)?),
        _ => return Err(usage("give exactly one of --shape-eigs and --mixing")),
    };
    let mut ctx = ShapeContext::new(mixing, a.tau, a.rw, a.n)?;
    if a.known_mean {
        ctx = ctx.with_known_mean();
    }
    let normal = match a.method {
        CltMethod::ClosedForm => beta_moments_normal(&ctx)?,
        CltMethod::Contour => {
            let sq = |z: Complex64| z * z;
            let cu = |z: Complex64| z * z * z;
            let fs: [TestFunction; 2] = [&sq, &cu];
            lss_normal_approx(&ctx, &fs, &ContourSpec::for_context(&ctx))?
        }
    };
    let report = CltReport {
        p: ctx.p,
        n: ctx.n,
        c_n: ctx.c_n,
        centering: beta_centering(&ctx),
        mean: normal.mean,
        cov: normal.cov,
    };
    emit(&report, manifest("clt-moments", &a)?, &a.out, io)
}

fn sphericity(a: SphericityArgs, io: &mut Streams) -> CliResult<()> {
    let x = SampleBatch::read_csv(&a.input, a.header)?;
    let b = sample_sscm(&x, &Center::EstimateMedian)?;
    let (r_w, source) = match a.rw {
        Some(r) => (r, RwSource::Supplied),
        None => (estimate_rw(&x, &DVector::from_vec(b.center.clone()))?, RwSource::Estimated),
    };
    let test = match a.test {
        TestArg::Frobenius => SphericityTest::Frobenius,
        TestArg::Kl => SphericityTest::KullbackLeibler,
    };
    let report = sphericity_test(test, &b, x.n(), r_w, source)?;
    emit(&report, manifest("sphericity", &a)?, &a.out, io)
}

fn shape_estimate(a: ShapeArgs, io: &mut Streams) -> CliResult<()> {
    let mut x = SampleBatch::read_csv(&a.input, a.header)?;
    if let ShapeCenter::SpatialMedian = a.center {
        let mu = spatial_median(&x, DEFAULT_MEDIAN_TOL, DEFAULT_MEDIAN_MAX_ITER)?.median;
        x = SampleBatch::new(x.centered(&mu.into()))?;
    }
    let kind = EstimatorKind::from_index(a.estimator as usize).expect("range checked by clap");
    let reference = a.reference.as_ref().map(read_matrix_csv).transpose()?;
    let opts = ShapeOptions {
        tau: a.tau,
        num_atoms: a.atoms,
        reference,
        tyler_max_iter: a.tyler_max_iter,
        ..ShapeOptions::default()
    };
    let report = estimate_shape(&x, kind, &opts)?;
    if let Some(path) = &a.matrix_out {
        write_matrix_csv(&report.t_hat, path)?;
    }
    emit(&report, manifest("shape-estimate", &a)?, &a.out, io)
}

fn simulate(a: SimulateArgs, io: &mut Streams) -> CliResult<()> {
    let id: ModelId = a.model.parse().map_err(|e: SscmError| usage(e.to_string()))?;
    let output = a.output.clone().unwrap_or_else(|| PathBuf::from(format!("{id}_seed{}.csv", a.seed)));
    let cfg = RunConfig { replications: a.reps, workers: a.workers, output_path: Some(output.clone()) };
    let summary = match id {
        ModelId::M1 | ModelId::M2 | ModelId::M3 => {
            if a.ps.is_some() || a.epsilons.is_some() {
                return Err(usage("--ps and --epsilons apply to Models 4 and 5"));
            }
            let base = if a.full { ModelSpec::full(id, a.seed) } else { ModelSpec::desk(id, a.seed) };
            let spec = ModelSpec { p: a.p.unwrap_or(base.p), n: a.n.unwrap_or(base.n), ..base };
            let table = run_qq_experiment(&spec, &cfg)?;
            json!({ "output": output, "spec": spec, "rows": table.rows.len(), "normal": table.normal })
        }
        ModelId::M4 | ModelId::M5 => {
            let mut grid = BenchmarkGrid::full(a.seed);
            grid.models = vec![id];
            if id == ModelId::M5 {
                grid.epsilons = vec![0.01, 0.05];
            }
            if let Some(ps) = &a.ps {
                grid.ps = parse_json_list("ps", ps)?;
            } else if let Some(p) = a.p {
                grid.ps = vec![p];
            }
            if let Some(eps) = &a.epsilons {
                grid.epsilons = parse_json_list("epsilons", eps)?;
            }
            if let Some(n) = a.n {
                grid.n = n;
            }
            let rows = run_shape_benchmark(&grid, &cfg, &ShapeOptions::default())?;
            json!({ "output": output, "grid": grid, "rows": rows.len() })
        }
    };
    writeln!(io.out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
