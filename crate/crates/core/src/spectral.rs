//! Spectrum of the weighted basic Laplacian `□_h` (Hermitian metric `e^h dη`)
//! and detection of Hamiltonian holomorphic vector fields.

use crate::error::{Error, Result};
use crate::linalg::generalized_symmetric_eigen;
use crate::model::{metric_state, BasicFunction, MetricState, TransverseModel};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `|λ - (2m+2)|` below this counts as kernel.
pub const KERNEL_THRESHOLD: f64 = 1e-4;
/// Eigenvalues this close to `2m+2` but outside the kernel band are ambiguous.
pub const KERNEL_GAP: f64 = 1e-3;
const MULTIPLICITY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Multiplicity {
    pub value: f64,
    pub multiplicity: usize,
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<BasicFunction>,
    pub multiplicities: Vec<Multiplicity>,
    /// First nonzero eigenvalue.
    pub lambda_1: f64,
    /// `max |⟨f_i, f_j⟩ - δ_ij|` in the weighted measure.
    pub orthonormality_error: f64,
    /// Max-norm of `□_h f - λ f` from the strong form, over returned pairs.
    pub strong_residual: f64,
    /// Weight `h` used (the state's own normalized Ricci potential).
    pub weight: BasicFunction,
    state: MetricState,
}

impl SpectrumResult {
    pub fn state(&self) -> &MetricState {
        &self.state
    }

    /// `λ₁ >= 2m + 2 - 1e-6`.
    pub fn lower_bound_holds(&self) -> bool {
        self.lambda_1 >= self.state.model().einstein_constant() - 1e-6
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub eigenvalues: Vec<f64>,
    pub multiplicities: Vec<Multiplicity>,
    pub lambda_1: f64,
    pub lower_bound_holds: bool,
    pub orthonormality_error: f64,
    pub strong_residual: f64,
    pub eigenfunction_coeffs: Vec<Vec<f64>>,
}

impl From<&SpectrumResult> for SpectrumSummary {
    fn from(s: &SpectrumResult) -> Self {
        Self {
            eigenvalues: s.eigenvalues.clone(),
            multiplicities: s.multiplicities.clone(),
            lambda_1: s.lambda_1,
            lower_bound_holds: s.lower_bound_holds(),
            orthonormality_error: s.orthonormality_error,
            strong_residual: s.strong_residual,
            eigenfunction_coeffs: s.eigenfunctions.iter().map(|f| f.coeffs().to_vec()).collect(),
        }
    }
}

fn weighted_matrices(state: &MetricState, h: &BasicFunction) -> (DMatrix<f64>, DMatrix<f64>) {
    let model = state.model();
    let grid = model.grid();
    let ell = model.fiber_length();
    let eh: Vec<f64> = h.values().iter().map(|v| v.exp()).collect();
    let ehr: Vec<f64> = eh.iter().zip(state.density()).map(|(a, b)| a * b).collect();
    let stiffness = grid.gram_gradients(&eh) * (0.5 * ell);
    let mass = grid.gram_values(&ehr) * (0.25 * ell);
    (stiffness, mass)
}

/// `□_h g = (□₀ g - 2 ∇h·∇g) / ρ` on the grid (unit-sphere gradients).
pub fn weighted_laplacian_values(state: &MetricState, h: &BasicFunction, g: &BasicFunction) -> Vec<f64> {
    let model = state.model();
    let grid = model.grid();
    let lap = grid.synthesize(&model.canonical_laplacian_coeffs(g));
    let dot = grid.gradient_dot(h.coeffs(), g.coeffs());
    lap.iter().zip(&dot).zip(state.density()).map(|((l, d), r)| (l - 2.0 * d) / r).collect()
}

/// Lowest `count` eigenpairs of `□_h` for the state's transverse metric.
pub fn basic_spectrum(state: &MetricState, count: usize) -> Result<SpectrumResult> {
    let model = state.model();
    let n = model.grid().n_modes();
    if count == 0 || count > n {
        return Err(Error::InvalidParameter(format!("count must lie in 1..={n}, got {count}")));
    }
    let h = state.ricci_potential()?.h;
    let (k, m) = weighted_matrices(state, &h);
    let eig = generalized_symmetric_eigen(&k, &m)?;
    let eigenvalues: Vec<f64> = eig.values[..count].to_vec();
    let mut eigenfunctions = Vec::with_capacity(count);
    for i in 0..count {
        let c = eig.vectors.column(i).iter().copied().collect();
        eigenfunctions.push(model.function_from_coeffs(c)?);
    }
    let sub = eig.vectors.columns(0, count);
    let gram = sub.transpose() * &m * sub;
    let orthonormality_error = (gram - DMatrix::identity(count, count)).abs().max();
    let mut strong_residual: f64 = 0.0;
    for (f, lam) in eigenfunctions.iter().zip(&eigenvalues) {
        let lf = model.project(&weighted_laplacian_values(state, &h, f));
        strong_residual = strong_residual.max(lf.max_abs_diff(&f.scaled(*lam)));
    }
    let mut multiplicities: Vec<Multiplicity> = Vec::new();
    for &v in &eigenvalues {
        match multiplicities.last_mut() {
            Some(last) if (v - last.value).abs() <= MULTIPLICITY_TOLERANCE * last.value.abs().max(1.0) => {
                last.multiplicity += 1;
            }
            _ => multiplicities.push(Multiplicity { value: v, multiplicity: 1 }),
        }
    }
    let lambda_1 = eig.values.iter().copied().find(|v| *v > 1e-8).unwrap_or(f64::NAN);
    Ok(SpectrumResult {
        eigenvalues,
        eigenfunctions,
        multiplicities,
        lambda_1,
        orthonormality_error,
        strong_residual,
        weight: h,
        state: state.clone(),
    })
}

/// Coefficients `X¹ = c₀ + c₁ z + c₂ z²` of the holomorphic field in the chart
/// `z = tan(θ/2) e^{iφ}`, as `(re, im)` pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HamiltonianFieldRecord {
    pub hamiltonian_coeffs: Vec<f64>,
    pub eigenvalue: f64,
    /// Max-norm of `(□_h - (2m+2)) u_X`.
    pub eigen_residual: f64,
    /// `∫ u_X e^h (dη)^m ∧ η`.
    pub normalization_integral: f64,
    pub field_coefficients: [(f64, f64); 3],
    /// Max of `|∂̄u_X + (i/2) i(X) dη|` over chart sample points.
    pub identity_residual: f64,
    /// Max of `|∂_z̄ X¹|` by finite differences of the reconstructed field.
    pub holomorphicity_residual: f64,
}

impl HamiltonianFieldRecord {
    pub fn passes(&self) -> bool {
        self.eigen_residual < 1e-6
            && self.normalization_integral.abs() < 1e-8
            && self.identity_residual < 1e-6
            && self.holomorphicity_residual < 1e-6
    }
}

type C64 = (f64, f64);

fn cmul(a: C64, b: C64) -> C64 {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Chart data at `(θ, φ)`: `z`, `∂_z̄ u` and `g_{11̄}`.
fn chart_point(model: &TransverseModel, density_coeffs: &[f64], u: &[f64], theta: f64, phi: f64) -> (C64, C64, f64) {
    let grid = model.grid();
    let r = (0.5 * theta).tan();
    let (_, u_t, u_p) = grid.eval_point_with_derivatives(u, theta, phi);
    let rho = grid.eval_point(density_coeffs, theta, phi);
    // ∂_z̄ = (e^{iφ}/2)(∂_R + (i/R)∂_φ), ∂_R = 2/(1+R²) ∂_θ
    let d_r = 2.0 / (1.0 + r * r) * u_t;
    let inner = (0.5 * d_r, 0.5 * u_p / r);
    let dzbar = cmul((phi.cos(), phi.sin()), inner);
    let g = rho / (2.0 * (1.0 + r * r).powi(2));
    ((r * phi.cos(), r * phi.sin()), dzbar, g)
}

fn field_at(model: &TransverseModel, density_coeffs: &[f64], u: &[f64], z: C64) -> C64 {
    let r = (z.0 * z.0 + z.1 * z.1).sqrt();
    let theta = 2.0 * r.atan();
    let phi = z.1.atan2(z.0);
    let (_, dzbar, g) = chart_point(model, density_coeffs, u, theta, phi);
    (2.0 * dzbar.0 / g, 2.0 * dzbar.1 / g)
}

fn reconstruct_field(model: &TransverseModel, density_coeffs: &[f64], u: &[f64]) -> Result<([C64; 3], f64, f64)> {
    let mut pts = Vec::new();
    for i in 0..9 {
        let theta = 0.35 + 0.22 * i as f64;
        for j in 0..12 {
            let phi = -3.0 + 0.5 * j as f64 + 0.1 * i as f64;
            pts.push(chart_point(model, density_coeffs, u, theta, phi));
        }
    }
    // least squares for X¹ = Σ c_k z^k, real unknowns (Re c_k, Im c_k)
    let rows = 2 * pts.len();
    let mut a = DMatrix::zeros(rows, 6);
    let mut b = DVector::zeros(rows);
    for (p, (z, dzbar, g)) in pts.iter().enumerate() {
        let x = (2.0 * dzbar.0 / g, 2.0 * dzbar.1 / g);
        let mut zk = (1.0, 0.0);
        for k in 0..3 {
            a[(2 * p, 2 * k)] = zk.0;
            a[(2 * p, 2 * k + 1)] = -zk.1;
            a[(2 * p + 1, 2 * k)] = zk.1;
            a[(2 * p + 1, 2 * k + 1)] = zk.0;
            zk = cmul(zk, *z);
        }
        b[2 * p] = x.0;
        b[2 * p + 1] = x.1;
    }
    let sol = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Eigen(format!("field fit failed: {e}")))?;
    let coeffs = [(sol[0], sol[1]), (sol[2], sol[3]), (sol[4], sol[5])];
    let eval = |z: C64| {
        let z2 = cmul(z, z);
        let t1 = cmul(coeffs[1], z);
        let t2 = cmul(coeffs[2], z2);
        (coeffs[0].0 + t1.0 + t2.0, coeffs[0].1 + t1.1 + t2.1)
    };
    // ∂̄u = (1/2) g X¹ dz̄ is the chart form of ∂̄u_X = -(i/2) i(X) dη
    let mut identity_residual: f64 = 0.0;
    for (z, dzbar, g) in &pts {
        let x = eval(*z);
        let d = (dzbar.0 - 0.5 * g * x.0, dzbar.1 - 0.5 * g * x.1);
        identity_residual = identity_residual.max(d.0.hypot(d.1));
    }
    let step = 1e-4;
    let mut holo: f64 = 0.0;
    for (z, _, _) in pts.iter().step_by(7) {
        let fx = |dx: f64, dy: f64| field_at(model, density_coeffs, u, (z.0 + dx, z.1 + dy));
        let (xp, xm, yp, ym) = (fx(step, 0.0), fx(-step, 0.0), fx(0.0, step), fx(0.0, -step));
        // ∂_z̄ = (∂_x + i ∂_y)/2
        let dx = ((xp.0 - xm.0) / (2.0 * step), (xp.1 - xm.1) / (2.0 * step));
        let dy = ((yp.0 - ym.0) / (2.0 * step), (yp.1 - ym.1) / (2.0 * step));
        let d = (0.5 * (dx.0 - dy.1), 0.5 * (dx.1 + dy.0));
        holo = holo.max(d.0.hypot(d.1));
    }
    Ok((coeffs, identity_residual, holo))
}

/// Basis of `Ker(□_h - (2m+2))` from a computed spectrum.
pub fn hamiltonian_fields(spectrum: &SpectrumResult) -> Result<Vec<HamiltonianFieldRecord>> {
    let state = spectrum.state();
    let model = state.model();
    let target = model.einstein_constant();
    if let Some(v) = spectrum
        .eigenvalues
        .iter()
        .find(|v| (*v - target).abs() >= KERNEL_THRESHOLD && (*v - target).abs() < KERNEL_GAP)
    {
        return Err(Error::AmbiguousKernel { target, gap: (v - target).abs() });
    }
    let density_coeffs = model.grid().analyze(state.density());
    let eh: Vec<f64> = spectrum.weight.values().iter().map(|v| v.exp()).collect();
    let mut out = Vec::new();
    for (f, lam) in spectrum.eigenfunctions.iter().zip(&spectrum.eigenvalues) {
        if (lam - target).abs() >= KERNEL_THRESHOLD {
            continue;
        }
        let lf = model.project(&weighted_laplacian_values(state, &spectrum.weight, f));
        let eigen_residual = lf.max_abs_diff(&f.scaled(target));
        let weighted: Vec<f64> = f.values().iter().zip(&eh).map(|(a, b)| a * b).collect();
        let normalization_integral = state.integrate_values(&weighted);
        let (coeffs, identity_residual, holomorphicity_residual) =
            reconstruct_field(model, &density_coeffs, f.coeffs())?;
        out.push(HamiltonianFieldRecord {
            hamiltonian_coeffs: f.coeffs().to_vec(),
            eigenvalue: *lam,
            eigen_residual,
            normalization_integral,
            field_coefficients: coeffs,
            identity_residual,
            holomorphicity_residual,
        });
    }
    Ok(out)
}

/// Number of eigenpairs examined by [`hamiltonian_detector`].
pub const DETECTOR_COUNT: usize = 16;

/// Hamiltonian holomorphic fields of the model's background metric.
pub fn hamiltonian_detector(model: &Arc<TransverseModel>) -> Result<Vec<HamiltonianFieldRecord>> {
    let state = metric_state(model, model.zero())?;
    let count = DETECTOR_COUNT.min(model.grid().n_modes());
    hamiltonian_fields(&basic_spectrum(&state, count)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, SymmetryMode};

    #[test]
    fn canonical_full_spectrum() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Full)).unwrap();
        let st = metric_state(&model, model.zero()).unwrap();
        let s = basic_spectrum(&st, 9).unwrap();
        let expect = [0.0, 4.0, 4.0, 4.0, 12.0, 12.0, 12.0, 12.0, 12.0];
        for (a, b) in s.eigenvalues.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert_eq!(s.multiplicities.iter().map(|m| m.multiplicity).collect::<Vec<_>>(), vec![1, 3, 5]);
        assert!(s.lower_bound_holds());
        assert!(s.orthonormality_error < 1e-10);
    }

    #[test]
    fn canonical_even_spectrum_skips_four() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Even)).unwrap();
        let st = metric_state(&model, model.zero()).unwrap();
        let s = basic_spectrum(&st, 6).unwrap();
        assert!((s.lambda_1 - 12.0).abs() < 1e-10);
        assert!(hamiltonian_detector(&model).unwrap().is_empty());
    }

    #[test]
    fn canonical_fields_are_rotations() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Full)).unwrap();
        let recs = hamiltonian_detector(&model).unwrap();
        assert_eq!(recs.len(), 3);
        for r in &recs {
            assert!(r.passes(), "{r:?}");
        }
    }

    #[test]
    fn y10_field_is_linear_in_z() {
        // u = Y₁₀ on the canonical model: X¹ = c z with c = -8 sqrt(3/(4π))
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Full)).unwrap();
        let u = model.harmonic(1, 0, 1.0).unwrap();
        let dens = model.grid().analyze(model.background_density());
        let (c, ident, holo) = reconstruct_field(&model, &dens, u.coeffs()).unwrap();
        let k = -8.0 * (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!((c[1].0 - k).abs() < 1e-9 && c[1].1.abs() < 1e-9);
        assert!(c[0].0.hypot(c[0].1) < 1e-9 && c[2].0.hypot(c[2].1) < 1e-9);
        assert!(ident < 1e-9 && holo < 1e-6);
    }
}
