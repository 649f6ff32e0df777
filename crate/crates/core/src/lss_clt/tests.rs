use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mp_law::{solve_stieltjes, DiscreteMeasure, SpectralModel};

fn cx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_mixing(p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(p, p, |i, j| (if i == j { 1.0 } else { 0.0 }) + 0.3 * rng.random_range(-1.0..1.0))
}

fn dense_ctx() -> ShapeContext {
    ShapeContext::new(Mixing::Dense(random_mixing(6, 11)), 4.5, 1.3, 10).unwrap()
}

fn identity_ctx(p: usize, n: usize, tau: f64, r_w: f64) -> ShapeContext {
    ShapeContext::new(Mixing::Diagonal(vec![1.0; p]), tau, r_w, n).unwrap()
}

fn hadamard_trace(x: &DMatrix<Complex64>, y: &DMatrix<Complex64>) -> Complex64 {
    x.component_mul(y).trace()
}

#[test]
fn aux_identity_mixing() {
    let a = DMatrix::<f64>::identity(5, 5);
    let (z, z2) = (cx(0.3, 0.8), cx(-1.0, 0.2));
    let (zeta, h, g) = aux_quantities(&a, &a, z, z2).unwrap();
    assert_abs_diff_eq!(zeta, 1.0, epsilon = 1e-14);
    assert!((h - (1.0 - z).inv()).norm() < 1e-12);
    assert!((g - ((1.0 - z) * (1.0 - z2)).inv()).norm() < 1e-12);
}

#[test]
fn aux_diagonal_zeta() {
    let d = [0.5, 1.0, 1.5, 2.0];
    let a = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&d));
    let (zeta, _, _) = aux_quantities(&a, &a, cx(0.0, 1.0), cx(0.0, 2.0)).unwrap();
    let expected = d.iter().map(|x: &f64| x.powi(4)).sum::<f64>() / 4.0;
    assert_abs_diff_eq!(zeta, expected, epsilon = 1e-13);
}

#[test]
fn aux_matches_brute_force() {
    let a = random_mixing(8, 3);
    let sigma = &a * a.transpose();
    let z = cx(-2.0, 0.0);
    let (_, _, g) = aux_quantities(&a, &sigma, z, z).unwrap();
    let ac = a.map(|x| cx(x, 0.0));
    let shifted = sigma.map(|x| cx(x, 0.0)) - DMatrix::<Complex64>::identity(8, 8) * z;
    let r = ac.transpose() * shifted.try_inverse().unwrap() * &ac;
    let brute = hadamard_trace(&r, &r) / 8.0;
    assert!((g - brute).norm() < 1e-12);
}

#[test]
fn grouped_hadamard_matches_dense() {
    let ctx = dense_ctx();
    let a = ctx.mixing.to_dense();
    let (u, v) = (cx(0.4, 0.9), cx(2.5, -0.3));
    let (zeta, h, g) = aux_quantities(&a, &ctx.sigma, u, v).unwrap();
    assert_abs_diff_eq!(ctx.zeta_p, zeta, epsilon = 1e-12);
    assert!((ctx.h_p(u) - h).norm() < 1e-10);
    assert!((ctx.g_p(u, v) - g).norm() < 1e-10);
}

#[test]
fn context_invariants() {
    let ctx = dense_ctx();
    assert_abs_diff_eq!(ctx.sigma.trace() / ctx.p as f64, 1.0, epsilon = 1e-10);
    assert_abs_diff_eq!(ctx.h_p.moment(1), 1.0, epsilon = 1e-10);
    assert!(ShapeContext::new(Mixing::Diagonal(vec![1.0; 4]), 3.0, 0.5, 10).is_err());
}

#[test]
fn expansion_diagonal_matches_dense() {
    let d = vec![0.6, 0.9, 1.1, 1.3, 1.05];
    let diag = sigma_from_mixing(&Mixing::Diagonal(d.clone()), 4.2);
    let dense = sigma_from_mixing(
        &Mixing::Dense(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d))),
        4.2,
    );
    assert!((diag - dense).abs().max() < 1e-14);
}

#[test]
fn mu2_and_sigma2_vanish_for_identity() {
    let ctx = identity_ctx(50, 100, 9.0, 1.0);
    for z in [cx(1.0, 0.5), cx(-0.2, 0.3), cx(3.0, -0.4)] {
        let (_, _, mu2) = mean_kernel(&ctx, z).unwrap();
        assert!(mu2.norm() < 1e-12, "mu2 = {mu2}");
        let (_, s2) = cov_kernel(&ctx, z, cx(0.7, 0.9)).unwrap();
        assert!(s2.norm() < 1e-12, "sigma2 = {s2}");
    }
}

#[test]
fn kappa_reduces_for_unit_rw() {
    let ctx = identity_ctx(40, 60, 3.0, 1.0);
    let model = ctx.spectral_model();
    for z in [cx(0.8, 0.6), cx(2.5, 0.2)] {
        let pair = solve_stieltjes(&model, z).unwrap();
        let (mb, mbp) = (pair.m_under, pair.m_under_prime);
        let expected = -(1.0 + z * mb) * (mb + z * mbp) / (z * mb);
        let (kappa, _, _) = mean_kernel(&ctx, z).unwrap();
        assert!((kappa - expected).norm() < 1e-12);
    }
}

/// With `r_w = 1`, `κ(z) ≈ p m_{c_{n-1}}(z) - p m_{c_n}(z)` up to an
/// `O(1/p)` remainder.
#[test]
fn kappa_matches_sample_size_shift() {
    let h = DiscreteMeasure::dirac(1.0).unwrap();
    let gap = |p: usize, n: usize, z: Complex64| {
        let ctx = identity_ctx(p, n, 3.0, 1.0);
        let m_n = SpectralModel::new(p as f64 / n as f64, h.clone()).unwrap();
        let m_n1 = SpectralModel::new(p as f64 / (n - 1) as f64, h.clone()).unwrap();
        let (kappa, _, _) = mean_kernel(&ctx, z).unwrap();
        let shift = p as f64
            * (solve_stieltjes(&m_n1, z).unwrap().m - solve_stieltjes(&m_n, z).unwrap().m);
        (kappa - shift).norm()
    };
    for z in [cx(1.0, 1.0), cx(4.0, 0.5), cx(-0.5, 0.5)] {
        let small = gap(400, 200, z);
        let large = gap(4000, 2000, z);
        assert!(small < 2e-3, "z = {z}: gap {small}");
        assert!(large < 2e-4, "z = {z}: gap {large}");
        assert!(large < 0.15 * small);
    }
}

#[test]
fn known_mean_drops_kappa() {
    let ctx = identity_ctx(20, 40, 3.0, 1.4).with_known_mean();
    let (kappa, _, _) = mean_kernel(&ctx, cx(1.0, 0.5)).unwrap();
    assert_eq!(kappa, cx(0.0, 0.0));
}

/// Mixed partial `∂²/∂z∂w` of an analytic function by central differences
/// with one Richardson step.
fn mixed_partial(f: impl Fn(Complex64, Complex64) -> Complex64, z: Complex64, w: Complex64, h: f64) -> Complex64 {
    let d = |h: f64| (f(z + h, w + h) - f(z + h, w - h) - f(z - h, w + h) + f(z - h, w - h)) / (4.0 * h * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

#[test]
fn sigma1_matches_numerical_potential() {
    let ctx = dense_ctx();
    let model = ctx.spectral_model();
    let c = ctx.c_n;
    let s2 = ctx.trace_sigma2_over_p;
    let potential = |z: Complex64, w: Complex64| {
        let m1 = solve_stieltjes(&model, z).unwrap().m_under;
        let m2 = solve_stieltjes(&model, w).unwrap().m_under;
        ((m1 - m2) / (m1 * m2 * (z - w))).ln()
            + (s2 / c + 1.0 / (c * m1) + 1.0 / (c * m2)) * (1.0 + z * m1) * (1.0 + w * m2)
            - z * m1
            - w * m2
    };
    for (z, w) in [(cx(1.2, 0.7), cx(0.4, 0.3)), (cx(3.0, 0.5), cx(-0.3, -0.4))] {
        let numeric = 2.0 * mixed_partial(potential, z, w, 1e-3);
        let (s1, _) = cov_kernel(&ctx, z, w).unwrap();
        assert!((s1 - numeric).norm() < 1e-6 * s1.norm().max(1.0), "{s1} vs {numeric}");
        let (s1_swapped, _) = cov_kernel(&ctx, w, z).unwrap();
        assert!((s1 - s1_swapped).norm() < 1e-8 * s1.norm().max(1.0));
    }
}

#[test]
fn sigma2_matches_numerical_potential() {
    let ctx = dense_ctx();
    let model = ctx.spectral_model();
    let a = ctx.mixing.to_dense();
    let c = ctx.c_n;
    let potential = |z: Complex64, w: Complex64| {
        let m1 = solve_stieltjes(&model, z).unwrap().m_under;
        let m2 = solve_stieltjes(&model, w).unwrap().m_under;
        let (u1, u2) = (-m1.inv(), -m2.inv());
        let (zeta, h1, g) = aux_quantities(&a, &ctx.sigma, u1, u2).unwrap();
        let h2 = aux_quantities(&a, &ctx.sigma, u2, u2).unwrap().1;
        c * g + zeta / c * (1.0 + z * m1) * (1.0 + w * m2) - (1.0 + z * m1) * h2 - (1.0 + w * m2) * h1
    };
    for (z, w) in [(cx(1.2, 0.7), cx(0.4, 0.3)), (cx(3.0, 0.5), cx(-0.3, -0.4))] {
        let numeric = mixed_partial(potential, z, w, 1e-3);
        let (_, s2) = cov_kernel(&ctx, z, w).unwrap();
        assert!((s2 - numeric).norm() < 1e-6 * s2.norm().max(1.0), "{s2} vs {numeric}");
    }
}

#[test]
fn mu2_matches_finite_difference_derivatives() {
    let ctx = dense_ctx();
    let model = ctx.spectral_model();
    let a = ctx.mixing.to_dense();
    let c = ctx.c_n;
    for z in [cx(1.2, 0.7), cx(-0.3, 0.4)] {
        let pair = solve_stieltjes(&model, z).unwrap();
        let (mb, mbp) = (pair.m_under, pair.m_under_prime);
        let u = -mb.inv();
        let step = 1e-6 * u.norm();
        let h_at = |v: Complex64| aux_quantities(&a, &ctx.sigma, v, v).unwrap().1;
        let g_at = |v: Complex64, w: Complex64| aux_quantities(&a, &ctx.sigma, v, w).unwrap().2;
        let dh = (h_at(u + step) - h_at(u - step)) / (2.0 * step);
        let dg = (g_at(u + step, u) - g_at(u - step, u)) / (2.0 * step);
        let t1: Complex64 = ctx
            .h_p
            .atoms()
            .iter()
            .map(|&(t, w)| w * t / (1.0 + mb * t).powi(2))
            .sum();
        let aa = 1.0 + z * mb;
        let expected = c * mbp / (mb * mb) * dg + ctx.zeta_p * aa * mbp * t1
            - aa * mbp / (mb * mb) * dh
            - c * mbp * t1 * h_at(u);
        let (_, _, mu2) = mean_kernel(&ctx, z).unwrap();
        assert!((mu2 - expected).norm() < 1e-6 * mu2.norm().max(1.0), "{mu2} vs {expected}");
    }
}

#[test]
fn cov_kernel_rejects_equal_points() {
    let ctx = identity_ctx(10, 20, 3.0, 1.0);
    assert!(cov_kernel(&ctx, cx(1.0, 1.0), cx(1.0, 1.0)).is_err());
}

fn square(z: Complex64) -> Complex64 {
    z * z
}

fn cube(z: Complex64) -> Complex64 {
    z * z * z
}

#[test]
fn contour_matches_closed_form_for_dirac() {
    let ctx = identity_ctx(100, 200, 3.0, 1.0);
    let contour = ContourSpec::for_context(&ctx);
    let fs: [TestFunction; 1] = [&square];
    let approx = lss_normal_approx(&ctx, &fs, &contour).unwrap();
    assert_abs_diff_eq!(approx.mean[0], -0.25, epsilon = 1e-3);
    assert_abs_diff_eq!(approx.cov[0][0], 1.0, epsilon = 1e-3);
}

#[test]
fn contour_constant_function_is_degenerate() {
    let ctx = identity_ctx(100, 50, 9.0, 1.2);
    let one = |_: Complex64| cx(1.0, 0.0);
    let fs: [TestFunction; 1] = [&one];
    let approx = lss_normal_approx(&ctx, &fs, &ContourSpec::for_context(&ctx)).unwrap();
    assert!(approx.mean[0].abs() < 1e-8);
    assert!(approx.cov[0][0].abs() < 1e-8);
}

#[test]
fn contour_matches_closed_form_with_rw_and_known_mean() {
    let half = |p: usize| (0..p).map(|i| if i < p / 2 { 0.5f64.sqrt() } else { 1.5f64.sqrt() }).collect::<Vec<_>>();
    for (n, rw, known) in [(60, 1.0, false), (120, 1.2, false), (80, 1.5, true)] {
        let mut ctx = ShapeContext::new(Mixing::Diagonal(half(60)), 3.0, rw, n).unwrap();
        if known {
            ctx = ctx.with_known_mean();
        }
        let fs: [TestFunction; 2] = [&square, &cube];
        let contour = lss_normal_approx(&ctx, &fs, &ContourSpec::for_context(&ctx)).unwrap();
        let closed = beta_moments_normal(&ctx).unwrap();
        for j in 0..2 {
            let rel = (contour.mean[j] - closed.mean[j]).abs() / closed.mean[j].abs();
            assert!(rel < 1e-3, "mean {j}: {} vs {}", contour.mean[j], closed.mean[j]);
            for l in 0..2 {
                let rel = (contour.cov[j][l] - closed.cov[j][l]).abs() / closed.cov[j][l].abs();
                assert!(rel < 1e-3, "cov {j}{l}: {} vs {}", contour.cov[j][l], closed.cov[j][l]);
            }
        }
    }
}

#[test]
fn contour_rejects_bad_rectangle() {
    let ctx = identity_ctx(50, 100, 3.0, 1.0);
    let mut contour = ContourSpec::for_context(&ctx);
    contour.x_right = 1.0;
    let fs: [TestFunction; 1] = [&square];
    assert!(lss_normal_approx(&ctx, &fs, &contour).is_err());
}

#[test]
fn closed_form_model_one_values() {
    // c = 2, r_w = 1, Σ = I
    let ctx = identity_ctx(400, 200, 9.0, 1.0);
    let approx = beta_moments_normal(&ctx).unwrap();
    assert_abs_diff_eq!(approx.mean[0], 2.0, epsilon = 1e-12);
    assert_abs_diff_eq!(approx.cov[0][0], 16.0, epsilon = 1e-12);
    let unit = identity_ctx(100, 100, 3.0, 1.0);
    assert_abs_diff_eq!(beta_moments_normal(&unit).unwrap().mean[1], -1.0, epsilon = 1e-12);
}

#[test]
fn closed_form_rejects_dense_with_non_gaussian_tau() {
    let ctx = dense_ctx();
    assert!(matches!(
        beta_moments_normal(&ctx),
        Err(crate::SscmError::UnsupportedConfiguration(_))
    ));
    let gaussian = ShapeContext::new(Mixing::Dense(random_mixing(6, 11)), 3.0, 1.3, 10).unwrap();
    assert!(beta_moments_normal(&gaussian).is_ok());
}

#[test]
fn tau_three_ignores_hadamard_terms() {
    let ctx = ShapeContext::new(Mixing::Dense(random_mixing(6, 11)), 3.0, 1.3, 10).unwrap();
    let fs: [TestFunction; 1] = [&square];
    let contour = ContourSpec::for_context(&ctx);
    let with = super::contour::integrate(&ctx, &fs, &contour, true).unwrap();
    let without = super::contour::integrate(&ctx, &fs, &contour, false).unwrap();
    assert_eq!(with, without);
}

#[test]
fn normal_approx_json_shape() {
    let approx = NormalApprox { mean: vec![1.0], cov: vec![vec![2.0]] };
    let json = serde_json::to_value(&approx).unwrap();
    assert_eq!(json["mean"][0], 1.0);
    assert_eq!(json["cov"][0][0], 2.0);
}
