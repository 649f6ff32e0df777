use super::*;
use approx::assert_abs_diff_eq;

fn draws(n: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> f64) -> Vec<f64> {
    let mut rng = substream(seed, 99);
    (0..n).map(|_| f(&mut rng)).collect()
}

fn raw_moment(xs: &[f64], k: i32) -> f64 {
    xs.iter().map(|x| x.powi(k)).sum::<f64>() / xs.len() as f64
}

#[test]
fn innovations_are_standardized() {
    for id in ModelId::ALL {
        let z = draws(100_000, 1, |r| innovation(id, r));
        let m = crate::stats::mean(&z);
        let se = crate::stats::standard_error(&z);
        assert!(m.abs() < 4.0 * se, "{id}: mean {m}");
        let v = crate::stats::variance(&z);
        // sd of the sample variance is sqrt((τ - 1)/n)
        assert!((v - 1.0).abs() < 4.0 * ((id.tau() - 1.0) / 1e5).sqrt(), "{id}: var {v}");
    }
}

#[test]
fn model_one_fourth_moment() {
    // E(E - 1)^4 = 9 for E ~ Exp(1)
    let z = draws(1_000_000, 2, |r| innovation(ModelId::M1, r));
    assert!((raw_moment(&z, 4) - 9.0).abs() < 0.5);
}

#[test]
fn model_three_fourth_moment() {
    let z = draws(1_000_000, 3, |r| innovation(ModelId::M3, r));
    assert!((raw_moment(&z, 4) - 4.2).abs() < 0.08);
}

#[test]
fn radial_dispersion_matches_rw() {
    for id in [ModelId::M2, ModelId::M3] {
        let w = draws(400_000, 4, |r| radial(id, r));
        let inv: Vec<f64> = w.iter().map(|v| 1.0 / v).collect();
        let r_w = raw_moment(&inv, 2) / raw_moment(&inv, 1).powi(2);
        assert!((r_w - id.r_w()).abs() < 0.01, "{id}: {r_w}");
    }
}

#[test]
fn shapes_have_trace_p() {
    for id in ModelId::ALL {
        let spec = ModelSpec { p: 10, n: 20, epsilon: 0.0, ..ModelSpec::full(id, 5) };
        let t = Population::new(spec).unwrap().shape_matrix();
        assert_abs_diff_eq!(t.trace(), 10.0, epsilon = 1e-12);
    }
}

#[test]
fn model_two_spike() {
    let p = 12;
    let spec = ModelSpec { p, n: 20, ..ModelSpec::full(ModelId::M2, 8) };
    let t = Population::new(spec).unwrap().shape_matrix();
    let eigs = crate::linalg::sym_eigenvalues_ascending(&t);
    let scale = 1.0 + 1.0 / p as f64;
    assert_abs_diff_eq!(eigs[p - 1], 2.0 / scale, epsilon = 1e-12);
    assert_abs_diff_eq!(eigs[0], 1.0 / scale, epsilon = 1e-12);
    let again = Population::new(spec).unwrap().shape_matrix();
    assert_eq!(t, again);
}

#[test]
fn spec_validation() {
    let odd = ModelSpec { p: 7, ..ModelSpec::full(ModelId::M3, 0) };
    assert!(matches!(Population::new(odd), Err(SscmError::InvalidArgument(_))));
    let eps = ModelSpec { epsilon: 0.1, ..ModelSpec::full(ModelId::M1, 0) };
    assert!(Population::new(eps).is_err());
    let big = ModelSpec { epsilon: 1.0, ..ModelSpec::full(ModelId::M4, 0) };
    assert!(Population::new(big).is_err());
    assert_eq!(ModelSpec::full(ModelId::M4, 0).outliers(), 1);
    assert_eq!(ModelSpec { epsilon: 0.05, ..ModelSpec::full(ModelId::M5, 0) }.outliers(), 5);
}

#[test]
fn full_and_desk_sizes() {
    let dims = |s: ModelSpec| (s.p, s.n);
    assert_eq!(dims(ModelSpec::full(ModelId::M1, 0)), (400, 200));
    assert_eq!(dims(ModelSpec::full(ModelId::M2, 0)), (400, 800));
    assert_eq!(dims(ModelSpec::full(ModelId::M3, 0)), (400, 400));
    assert_eq!(dims(ModelSpec::desk(ModelId::M1, 0)), (200, 100));
    assert_eq!(ModelSpec::full(ModelId::M5, 0).n, 100);
}

#[test]
fn contamination_only_touches_outlier_rows() {
    let base = ModelSpec { p: 6, n: 100, epsilon: 0.0, ..ModelSpec::full(ModelId::M4, 11) };
    let dirty = ModelSpec { epsilon: 0.05, ..base };
    let a = Population::new(base).unwrap().sample(3);
    let b = Population::new(dirty).unwrap().sample(3);
    for j in 0..95 {
        assert_eq!(a.data().row(j), b.data().row(j));
    }
    for j in 95..100 {
        let ratio = b.data().row(j).norm() / a.data().row(j).norm();
        assert_abs_diff_eq!(ratio, 4.0, epsilon = 1e-12);
    }
}

#[test]
fn model_five_outliers_swap_halves() {
    let spec = ModelSpec { p: 4, n: 100, epsilon: 0.01, ..ModelSpec::full(ModelId::M5, 2) };
    let pop = Population::new(spec).unwrap();
    let clean = Population::new(ModelSpec { epsilon: 0.0, ..spec }).unwrap();
    let (x, y) = (pop.sample(0), clean.sample(0));
    let r = x.data()[(99, 0)] / y.data()[(99, 0)];
    assert_abs_diff_eq!(r, 4.0 * (1.5f64 / 0.5).sqrt(), epsilon = 1e-12);
}

#[test]
fn qq_is_worker_independent() {
    let spec = ModelSpec { p: 20, n: 10, ..ModelSpec::desk(ModelId::M1, 7) };
    let one = RunConfig { replications: 12, workers: 1, output_path: None };
    let four = RunConfig { workers: 4, ..one.clone() };
    let a = run_qq_experiment(&spec, &one).unwrap();
    let b = run_qq_experiment(&spec, &four).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.rows.len(), 12);
}

#[test]
fn qq_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qq.csv");
    let spec = ModelSpec { p: 10, n: 20, ..ModelSpec::desk(ModelId::M3, 1) };
    let cfg = RunConfig { replications: 3, workers: 2, output_path: Some(path.clone()) };
    let table = run_qq_experiment(&spec, &cfg).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("replicate,beta2_hat,beta3_hat,z2_normalized,z3_normalized\n"));
    assert_eq!(text.lines().count(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(manifest_path(&path)).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["seed"], 1);
    assert_eq!(manifest["replications"], 3);
    let z = table.restandardize(&table.normal, table.centering);
    assert_eq!(z[2][0], table.rows[2].z2_normalized);
}

#[test]
fn qq_rejects_contaminated_models() {
    let spec = ModelSpec::full(ModelId::M4, 0);
    assert!(run_qq_experiment(&spec, &RunConfig::new(1)).is_err());
    assert!(run_qq_experiment(&ModelSpec::desk(ModelId::M1, 0), &RunConfig::new(0)).is_err());
}

#[test]
fn benchmark_skips_tyler_when_p_exceeds_n() {
    let grid = BenchmarkGrid { models: vec![ModelId::M4], epsilons: vec![0.0], ps: vec![2, 12], n: 10, seed: 3 };
    let cfg = RunConfig { replications: 2, workers: 2, output_path: None };
    let rows = run_shape_benchmark(&grid, &cfg, &ShapeOptions::default()).unwrap();
    let small: Vec<usize> = rows.iter().filter(|r| r.p == 2).map(|r| r.estimator).collect();
    let large: Vec<usize> = rows.iter().filter(|r| r.p == 12).map(|r| r.estimator).collect();
    assert_eq!(small, vec![1, 2, 3, 4, 5, 6]);
    assert_eq!(large, vec![1, 2, 3, 4]);
    assert!(rows.iter().all(|r| r.successes + r.failures == 2));
}

#[test]
fn model_id_parsing() {
    assert_eq!("m3".parse::<ModelId>().unwrap(), ModelId::M3);
    assert_eq!("5".parse::<ModelId>().unwrap(), ModelId::M5);
    assert!("M6".parse::<ModelId>().is_err());
}
