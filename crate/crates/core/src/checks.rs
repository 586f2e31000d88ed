//! Randomized invariant checks shared by the `verify` command and the tests.

use crate::error::Result;
use crate::linalg::generalized_symmetric_eigen;
use crate::ma_solver::{linearization, residual, Equation};
use crate::model::{metric_state, BasicFunction, MetricState, TransverseModel};
use crate::sampling::{random_potential, seeded_rng, DEFAULT_MARGIN};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    /// Passes when `value < tolerance`.
    pub fn below(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value.is_finite() && value < tolerance,
            detail: detail.into(),
        }
    }

    /// Passes when `value >= threshold`.
    pub fn at_least(name: &str, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance: threshold,
            pass: value.is_finite() && value >= threshold,
            detail: detail.into(),
        }
    }
}

/// `max |∫(dη_u)^m ∧ η - V| / V` over `count` random admissible potentials.
pub fn volume_invariance(model: &Arc<TransverseModel>, count: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let v = model.volume();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let u = random_potential(model, &mut rng, DEFAULT_MARGIN);
        let st = metric_state(model, u)?;
        worst = worst.max((st.volume() - v).abs() / v);
    }
    Ok(worst)
}

fn random_pair(
    model: &Arc<TransverseModel>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(MetricState, BasicFunction)> {
    let u = random_potential(model, rng, DEFAULT_MARGIN);
    let f = random_potential(model, rng, DEFAULT_MARGIN);
    Ok((metric_state(model, u)?, f))
}

/// `max ‖Δ f - 2 □ f‖_∞` over random states and functions.
pub fn laplacian_consistency(model: &Arc<TransverseModel>, count: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (st, f) = random_pair(model, &mut rng)?;
        let d = st.de_rham_laplacian(&f)?;
        let c = st.complex_laplacian(&f)?;
        worst = worst.max(d.max_abs_diff(&c.scaled(2.0)));
    }
    Ok(worst)
}

/// Relative asymmetry `|∫ f □g - ∫ g □f| / (|∫ f □g| + 1e-300)`.
pub fn integration_by_parts(model: &Arc<TransverseModel>, count: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (st, f) = random_pair(model, &mut rng)?;
        let g = random_potential(model, &mut rng, DEFAULT_MARGIN);
        let lf = st.complex_laplacian(&f)?;
        let lg = st.complex_laplacian(&g)?;
        let prod = |a: &BasicFunction, b: &BasicFunction| -> Vec<f64> {
            a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect()
        };
        let a = st.integrate_values(&prod(&f, &lg));
        let b = st.integrate_values(&prod(&lf, &g));
        worst = worst.max((a - b).abs() / (a.abs() + 1e-300));
    }
    Ok(worst)
}

/// Smallest eigenvalue of the discrete `□_u` (mass-matrix weighted).
pub fn complex_laplacian_min_eigenvalue(state: &MetricState) -> Result<f64> {
    let model = state.model();
    let n = model.grid().n_modes();
    let scale = model.fiber_length() / 4.0;
    let stiff =
        DMatrix::from_diagonal(&DVector::from_iterator(n, model.complex_eigenvalues().iter().map(|l| l * scale)));
    Ok(generalized_symmetric_eigen(&stiff, &state.mass_matrix())?.values[0])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearizationCheck {
    pub equation: Equation,
    pub epsilons: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log ε`.
    pub slope: f64,
}

/// Compares `(Φ(u + εδ) - Φ(u))/ε` with `(dΦ)_u(δ)` for ε = 1e-3 … 1e-6.
pub fn linearization_check(
    state: &MetricState,
    t: f64,
    eqn: Equation,
    delta: &BasicFunction,
) -> Result<LinearizationCheck> {
    let model = state.model();
    let base = residual(state, t, eqn)?;
    let lin = linearization(state, t, eqn, delta)?;
    let epsilons = vec![1e-3, 1e-4, 1e-5, 1e-6];
    let mut errors = Vec::new();
    for &eps in &epsilons {
        let st = metric_state(model, state.potential().add_scaled(eps, delta))?;
        let r = residual(&st, t, eqn)?;
        let fd = r.add_scaled(-1.0, &base).scaled(1.0 / eps);
        errors.push(fd.max_abs_diff(&lin));
    }
    let xs: Vec<f64> = epsilons.iter().map(|e| e.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(LinearizationCheck { equation: eqn, epsilons, errors, slope: sxy / sxx })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, SymmetryMode};

    fn perturbed() -> Arc<TransverseModel> {
        build_model(
            ModelConfig::canonical(12, SymmetryMode::Full).with_perturbation(2, 0, 0.05).with_perturbation(3, 2, 0.01),
        )
        .unwrap()
    }

    #[test]
    fn invariants_hold_on_small_model() {
        let model = perturbed();
        assert!(volume_invariance(&model, 10, 1).unwrap() < 1e-12);
        assert!(laplacian_consistency(&model, 5, 2).unwrap() < 1e-8);
        assert!(integration_by_parts(&model, 5, 3).unwrap() < 1e-8);
        let st = metric_state(&model, model.zero()).unwrap();
        assert!(complex_laplacian_min_eigenvalue(&st).unwrap() > -1e-10);
    }

    #[test]
    fn linearization_is_first_order() {
        let model = perturbed();
        let st = metric_state(&model, model.harmonic(2, 1, 0.01).unwrap()).unwrap();
        let delta = model.harmonic(3, 0, 0.5).unwrap().shifted(0.2);
        for eqn in [Equation::S1, Equation::S2] {
            let c = linearization_check(&st, 0.6, eqn, &delta).unwrap();
            assert!(c.slope >= 0.9, "{c:?}");
        }
    }
}
