use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SscmError};
use crate::mp_law::{moments_from_psd, psd_moments_from_lsd, DiscreteMeasure};

/// Smallest weight any fitted atom may carry.
pub const MIN_WEIGHT: f64 = 0.01;
/// Penalty per atom beyond the first in automatic order selection.
pub const ATOM_PENALTY: f64 = 0.01;
const MAX_ATOMS: usize = 3;
const SELECTION_MOMENTS: usize = 2 * MAX_ATOMS;
const NM_MAX_ITERS: u64 = 4000;
const NM_RESTARTS: usize = 3;

/// Fitted population spectral distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub measure: DiscreteMeasure,
    /// `Σ_k ((β̂_k - β_k(Ĥ)) / β̂_k)²` over the fitted moments.
    pub objective: f64,
    pub num_atoms: usize,
}

/// `β̂_k = p⁻¹ Σ λ^k`, `k = 1..=k_max`.
pub fn sample_moments(eigs: &[f64], k_max: usize) -> Vec<f64> {
    let p = eigs.len() as f64;
    (1..=k_max as i32).map(|k| eigs.iter().map(|l| l.powi(k)).sum::<f64>() / p).collect()
}

struct Mismatch<'a> {
    target: &'a [f64],
    c: f64,
    atoms: usize,
}

impl Mismatch<'_> {
    fn decode(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let k = self.atoms;
        let values = x[..k].iter().map(|v| v.exp());
        let weights: Vec<f64> = if k == 1 {
            vec![1.0]
        } else {
            let logits = &x[k..];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = e.iter().sum();
            e.iter().map(|v| MIN_WEIGHT + (1.0 - k as f64 * MIN_WEIGHT) * v / total).collect()
        };
        values.zip(weights).collect()
    }

    fn encode(&self, atoms: &[(f64, f64)]) -> Vec<f64> {
        let k = self.atoms;
        let mut x: Vec<f64> = atoms.iter().map(|a| a.0.max(1e-8).ln()).collect();
        if k > 1 {
            let free = 1.0 - k as f64 * MIN_WEIGHT;
            x.extend(atoms.iter().map(|a| ((a.1 - MIN_WEIGHT).max(1e-6) / free).ln()));
        }
        x
    }
}

fn relative_mismatch(target: &[f64], c: f64, atoms: &[(f64, f64)]) -> f64 {
    let alphas: Vec<f64> = (1..=target.len() as i32)
        .map(|k| atoms.iter().map(|&(t, w)| w * t.powi(k)).sum())
        .collect();
    moments_from_psd(&alphas, c)
        .iter()
        .zip(target)
        .map(|(b, t)| ((t - b) / t).powi(2))
        .sum()
}

impl CostFunction for Mismatch<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let value = relative_mismatch(self.target, self.c, &self.decode(x));
        Ok(if value.is_finite() { value } else { f64::MAX })
    }
}

/// Atoms matching `α_0..α_{2k-1}` (Prony): the atom values are the roots of
/// the orthogonal polynomial from the Hankel system, the weights solve the
/// Vandermonde system.
fn prony_guess(alphas: &[f64], k: usize) -> Option<Vec<(f64, f64)>> {
    if k == 1 {
        return Some(vec![(alphas[1], 1.0)]);
    }
    let hankel = DMatrix::from_fn(k, k, |j, m| alphas[j + m]);
    let rhs = DVector::from_fn(k, |j, _| -alphas[j + k]);
    let coef = hankel.lu().solve(&rhs)?;
    let mut companion = DMatrix::<f64>::zeros(k, k);
    for i in 1..k {
        companion[(i, i - 1)] = 1.0;
    }
    for i in 0..k {
        companion[(i, k - 1)] = -coef[i];
    }
    let roots: Vec<f64> = companion.complex_eigenvalues().iter().map(|r| r.re).collect();
    if roots.iter().any(|r| !r.is_finite() || *r <= 0.0) {
        return None;
    }
    let vander = DMatrix::from_fn(k, k, |j, i| roots[i].powi(j as i32));
    let moments = DVector::from_fn(k, |j, _| alphas[j]);
    let w = vander.lu().solve(&moments)?;
    let mut atoms: Vec<(f64, f64)> = roots.into_iter().zip(w.iter().map(|v| v.max(MIN_WEIGHT))).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.iter_mut().for_each(|a| a.1 /= total);
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    Some(atoms)
}

/// Atoms at equally spaced quantiles of the sample eigenvalues.
fn quantile_guess(eigs: &[f64], k: usize) -> Vec<(f64, f64)> {
    let mut sorted = eigs.to_vec();
    sorted.sort_by(f64::total_cmp);
    (0..k)
        .map(|i| {
            let q = (i as f64 + 0.5) / k as f64;
            let idx = ((q * sorted.len() as f64) as usize).min(sorted.len() - 1);
            (sorted[idx].max(1e-3), 1.0 / k as f64)
        })
        .collect()
}

fn nelder_mead(problem: &Mismatch, start: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let dim = start.len();
    let mut simplex = vec![start.clone()];
    for i in 0..dim {
        let mut v = start.clone();
        v[i] += if i < problem.atoms { 0.1 } else { 0.5 };
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-16)
        .map_err(|e| SscmError::numeric(e.to_string()))?;
    let problem = Mismatch { target: problem.target, c: problem.c, atoms: problem.atoms };
    let res = Executor::new(problem, solver)
        .configure(|state| state.max_iters(NM_MAX_ITERS))
        .run()
        .map_err(|_| SscmError::ConvergenceFailure {
            context: "moment method",
            iterations: 0,
            residual: f64::NAN,
            last_iterate: Some(start.clone()),
        })?;
    let state = res.state();
    let best = state.get_best_param().cloned().unwrap_or(start);
    Ok((best, state.get_best_cost()))
}

fn fit_fixed(target: &[f64], eigs: &[f64], c: f64, k: usize) -> Result<(Vec<(f64, f64)>, f64)> {
    let needed = &target[..2 * k];
    let problem = Mismatch { target: needed, c, atoms: k };
    let mut alphas = vec![1.0];
    alphas.extend(psd_moments_from_lsd(needed, c));
    let mut candidates = vec![quantile_guess(eigs, k)];
    if let Some(g) = prony_guess(&alphas, k) {
        candidates.insert(0, g);
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for guess in candidates {
        let mut x = problem.encode(&guess);
        let mut cost = problem.cost(&x).unwrap_or(f64::MAX);
        for _ in 0..NM_RESTARTS {
            let (nx, ncost) = nelder_mead(&problem, x.clone())?;
            if ncost < cost {
                x = nx;
                cost = ncost;
            } else {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((x, cost));
        }
    }
    let (x, cost) = best.expect("at least one candidate");
    if !cost.is_finite() || cost == f64::MAX {
        return Err(SscmError::ConvergenceFailure {
            context: "moment method",
            iterations: NM_MAX_ITERS as usize,
            residual: cost,
            last_iterate: Some(x),
        });
    }
    Ok((problem.decode(&x), cost))
}

/// Estimates a population spectral distribution with `num_atoms` atoms
/// whose `F^{c,H}` moments match the first `2 num_atoms` sample moments of
/// `sample_eigs`. `None` selects 1, 2 or 3 atoms by the six-moment
/// mismatch plus [`ATOM_PENALTY`] per extra atom.
pub fn moment_method_psd(sample_eigs: &[f64], c_n: f64, num_atoms: Option<usize>) -> Result<MomentFit> {
    if sample_eigs.is_empty() {
        return Err(SscmError::invalid("no eigenvalues"));
    }
    if !(c_n > 0.0) {
        return Err(SscmError::invalid("c_n must be positive"));
    }
    if let Some(k) = num_atoms {
        if !(1..=MAX_ATOMS).contains(&k) {
            return Err(SscmError::invalid(format!("num_atoms = {k} must be 1, 2 or 3")));
        }
    }
    let target = sample_moments(sample_eigs, SELECTION_MOMENTS);
    if target.iter().any(|b| !(*b > 0.0)) {
        return Err(SscmError::invalid("sample moments must be positive"));
    }
    let orders: Vec<usize> = match num_atoms {
        Some(k) => vec![k],
        None => (1..=MAX_ATOMS).collect(),
    };
    let mut best: Option<(f64, MomentFit)> = None;
    for k in orders {
        let (atoms, objective) = fit_fixed(&target, sample_eigs, c_n, k)?;
        let score = if num_atoms.is_some() {
            objective
        } else {
            relative_mismatch(&target, c_n, &atoms) + ATOM_PENALTY * (k - 1) as f64
        };
        let fit = MomentFit { measure: DiscreteMeasure::normalized(atoms)?, objective, num_atoms: k };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, fit));
        }
    }
    Ok(best.expect("at least one order").1)
}

/// Expands `H` to `p` ascending values, atom `i` repeated `round(w_i p)`
/// times with largest-remainder rounding.
pub fn expand_measure(h: &DiscreteMeasure, p: usize) -> Vec<f64> {
    let atoms = h.atoms();
    let exact: Vec<f64> = atoms.iter().map(|a| a.1 * p as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&i, &j| (exact[j] - exact[j].floor()).total_cmp(&(exact[i] - exact[i].floor())).then(i.cmp(&j)));
    for &i in order.iter().take(p.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    atoms
        .iter()
        .zip(counts)
        .flat_map(|(a, k)| std::iter::repeat_n(a.0, k))
        .collect()
}
