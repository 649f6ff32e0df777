use std::path::Path;
use std::process::Command;

use num_complex::Complex64;
use serde_json::Value;
use sscm::mp_law::{solve_stieltjes, DiscreteMeasure, SpectralModel};

fn sscm() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sscm"));
    cmd.env_remove("SSCM_SEED");
    cmd
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = sscm().args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn write_data(path: &Path, rows: &[Vec<f64>]) {
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(path, text).unwrap();
}

fn pseudo_data(n: usize, p: usize) -> Vec<Vec<f64>> {
    // deterministic, spread-out rows without any randomness crate
    (0..n)
        .map(|j| (0..p).map(|i| (((j * 7919 + i * 104_729) % 1000) as f64 / 500.0 - 1.0) + 0.01 * i as f64).collect())
        .collect()
}

#[test]
fn mp_solve_matches_library() {
    let (code, out, err) = run(&["mp-solve", "--c", "0.5", "--H", "[[1,1]]", "--z", "1+1i"]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&out).unwrap();
    let model = SpectralModel::new(0.5, DiscreteMeasure::dirac(1.0).unwrap()).unwrap();
    let direct = solve_stieltjes(&model, Complex64::new(1.0, 1.0)).unwrap();
    assert_eq!(v["m"][0].as_f64().unwrap(), direct.m.re);
    assert_eq!(v["m"][1].as_f64().unwrap(), direct.m.im);
    let manifest: Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(manifest["command"], "mp-solve");
}

#[test]
fn mp_solve_several_points() {
    let (code, out, _) = run(&["mp-solve", "--c", "2", "--H", "{\"atoms\": [[1, 0.5], [3, 0.5]]}", "--z", "1+1i", "-2"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["mp-solve", "--c", "0.5", "--H", "[[1,1]]", "--z", "1+1i", "--bogus"]).0, 1);
    assert_eq!(run(&["mp-solve", "--c", "0.5", "--H", "nonsense", "--z", "1"]).0, 1);
    assert_eq!(run(&["frobnicate"]).0, 1);
    assert_eq!(run(&["shape-estimate", "--input", "x.csv", "--estimator", "7"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn real_point_inside_support_is_rejected() {
    // the support is [0.09, 2.9]
    let (code, _, err) = run(&["mp-solve", "--c", "0.5", "--H", "[[1,1]]", "--z", "1"]);
    assert_eq!(code, 1);
    assert!(err.contains("support"));
}

#[test]
fn numeric_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_data(&data, &pseudo_data(30, 4));
    let (code, _, err) = run(&[
        "shape-estimate", "--input", data.to_str().unwrap(), "--estimator", "5", "--tyler-max-iter", "1",
    ]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("did not converge"));
}

#[test]
fn clt_moments_methods_agree() {
    let base = ["clt-moments", "--shape-eigs", "[0.5,0.5,0.5,0.5,1.5,1.5,1.5,1.5]", "--n", "16", "--tau", "4.2", "--rw", "1.2"];
    let (c1, a, _) = run(&base);
    let mut contour = base.to_vec();
    contour.extend(["--method", "contour"]);
    let (c2, b, _) = run(&contour);
    assert_eq!((c1, c2), (0, 0));
    let (a, b): (Value, Value) = (serde_json::from_str(&a).unwrap(), serde_json::from_str(&b).unwrap());
    for i in 0..2 {
        let (x, y) = (a["mean"][i].as_f64().unwrap(), b["mean"][i].as_f64().unwrap());
        assert!((x - y).abs() < 0.05 * x.abs().max(1.0), "{x} {y}");
    }
}

#[test]
fn sphericity_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_data(&data, &pseudo_data(40, 5));
    let out_path = dir.path().join("report.json");
    let (code, _, err) = run(&[
        "sphericity", "--input", data.to_str().unwrap(), "--test", "frobenius", "--rw", "1",
        "--output", out_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_eq!(v["test"], "frobenius");
    assert_eq!(v["r_w_source"], "supplied");
    assert!(out_path.with_extension("manifest.json").exists());
    let (code, out, _) = run(&["sphericity", "--input", data.to_str().unwrap(), "--test", "kl"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["r_w_source"], "estimated");
}

#[test]
fn shape_estimate_writes_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_data(&data, &pseudo_data(30, 4));
    let matrix = dir.path().join("t.csv");
    for k in ["1", "3", "5"] {
        let (code, out, err) = run(&[
            "shape-estimate", "--input", data.to_str().unwrap(), "--estimator", k,
            "--matrix-out", matrix.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        let v: Value = serde_json::from_str(&out).unwrap();
        let total: f64 = v["spectrum"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((total - 4.0).abs() < 1e-9);
        let t = sscm::sign_geometry::read_matrix_csv(&matrix).unwrap();
        assert!((t.trace() - 4.0).abs() < 1e-9);
    }
}

#[test]
fn shape_estimate_median_centering_removes_a_shift() {
    let dir = tempfile::tempdir().unwrap();
    let rows = pseudo_data(30, 4);
    let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v + 5.0).collect()).collect();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_data(&a, &rows);
    write_data(&b, &shifted);
    let spectrum = |path: &std::path::Path| {
        let (code, out, err) = run(&[
            "shape-estimate", "--input", path.to_str().unwrap(), "--estimator", "1", "--center", "spatial-median",
        ]);
        assert_eq!(code, 0, "{err}");
        let v: Value = serde_json::from_str(&out).unwrap();
        v["spectrum"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<_>>()
    };
    for (x, y) in spectrum(&a).iter().zip(spectrum(&b)) {
        assert!((x - y).abs() < 1e-8);
    }
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"c": 0.5, "H": "[[1,1]]", "z": ["1+1i"]}"#).unwrap();
    let (code, out, err) = run(&["mp-solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let (_, direct, _) = run(&["mp-solve", "--c", "0.5", "--H", "[[1,1]]", "--z", "1+1i"]);
    assert_eq!(out, direct);
    let (_, other, _) = run(&["mp-solve", "--config", cfg.to_str().unwrap(), "--c", "2"]);
    assert_ne!(out, other);
    std::fs::write(&cfg, r#"{"unknown_flag": 1}"#).unwrap();
    assert_eq!(run(&["mp-solve", "--config", cfg.to_str().unwrap()]).0, 1);
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (path, workers) in [(&a, "1"), (&b, "3")] {
        let (code, _, err) = run(&[
            "simulate", "--model", "M1", "--reps", "20", "--seed", "7", "--p", "20", "--n", "10",
            "--workers", workers, "--output", path.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.with_extension("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["spec"]["seed"], 7);
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("env.csv");
    let b = dir.path().join("flag.csv");
    let common = ["simulate", "--model", "M3", "--reps", "4", "--p", "10", "--n", "20"];
    let out = sscm()
        .args(common)
        .args(["--output", a.to_str().unwrap()])
        .env("SSCM_SEED", "42")
        .output()
        .unwrap();
    assert!(out.status.success());
    let mut flag = common.to_vec();
    flag.extend(["--seed", "42", "--output", b.to_str().unwrap()]);
    assert_eq!(run(&flag).0, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn simulate_benchmark_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    let (code, _, err) = run(&[
        "simulate", "--model", "M5", "--reps", "2", "--ps", "[2, 12]", "--epsilons", "[0.05]", "--n", "10",
        "--output", path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("model,epsilon,p,estimator,mean_frobenius"));
    assert_eq!(text.lines().count(), 1 + 6 + 4);
}
