//! Quotient geometry of the regular Hopf model `S^3 -> CP^1`.
//!
//! Every transverse object is basic, so it descends to the quotient sphere.
//! The canonical transverse form `dη₀` is the area form of the round sphere of
//! radius 1/2, whose Ricci form is `(2m + 2) dη₀` with `m = 1`. All other
//! transverse forms are stored as a conformal density `ρ` against `dη₀`.
//!
//! Conventions used throughout the crate:
//!
//! * `□` is the complex Laplacian with nonnegative spectrum. On the canonical
//!   quotient `□₀ Y_l = 2 l (l + 1) Y_l`, and for `m = 1` the conformal metric
//!   `ρ dη₀` has `□ = □₀ / ρ`.
//! * `dη_u = dη + i∂∂̄u`, so `tr_{dη}(i∂∂̄u) = -□u` and the Monge-Ampère
//!   ratio is `1 - □u`.
//! * Lifted integrals carry the fiber length: `∫_S f (dη_u)^m ∧ η` is
//!   `fiber_length * ∫_quotient f dη_u`.

use crate::error::{Error, Result};
use crate::sphere::SphereGrid;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::{Arc, OnceLock};

/// Transverse complex dimension of the built-in model.
pub const TRANSVERSE_DIM: usize = 1;

pub const MIN_BAND_LIMIT: usize = 8;

/// Relative tolerance on the mean of `s^T - m(2m+2)` accepted as the basic
/// class condition.
pub const CLASS_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymmetryMode {
    #[default]
    Full,
    Even,
}

fn default_fiber_length() -> f64 {
    2.0 * PI
}

/// Model configuration as read from the structured text (TOML) config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub band_limit: usize,
    #[serde(default = "default_fiber_length")]
    pub fiber_length: f64,
    #[serde(default)]
    pub symmetry_mode: SymmetryMode,
    /// Background potential `ψ` as `(degree, order, amplitude)` triples of real
    /// spherical harmonics.
    #[serde(default)]
    pub perturbation: Vec<(usize, i64, f64)>,
}

impl ModelConfig {
    pub fn canonical(band_limit: usize, symmetry_mode: SymmetryMode) -> Self {
        Self { band_limit, fiber_length: default_fiber_length(), symmetry_mode, perturbation: Vec::new() }
    }

    pub fn with_perturbation(mut self, degree: usize, order: i64, amplitude: f64) -> Self {
        self.perturbation.push((degree, order, amplitude));
        self
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// A basic (fiber-independent) scalar field, band limited on the model grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicFunction {
    values: Vec<f64>,
    coeffs: Vec<f64>,
    band_limit: usize,
    even_only: bool,
}

impl BasicFunction {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn band_limit(&self) -> usize {
        self.band_limit
    }

    pub fn even_only(&self) -> bool {
        self.even_only
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// `sup - inf` over the grid.
    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    fn same_space(&self, other: &Self) {
        assert_eq!(self.band_limit, other.band_limit, "band limits differ");
        assert_eq!(self.even_only, other.even_only, "symmetry modes differ");
    }

    /// `self + scale * other`.
    pub fn add_scaled(&self, scale: f64, other: &Self) -> Self {
        self.same_space(other);
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + scale * b).collect(),
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + scale * b).collect(),
            band_limit: self.band_limit,
            even_only: self.even_only,
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * scale).collect(),
            coeffs: self.coeffs.iter().map(|v| v * scale).collect(),
            band_limit: self.band_limit,
            even_only: self.even_only,
        }
    }

    /// Adds a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v += c);
        // constant mode is always index 0 with Y_00 = 1 / sqrt(4 pi)
        out.coeffs[0] += c * (4.0 * PI).sqrt();
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

/// `λ = τ - 2`, `ν = 2m + 2 - τ` for an η-Einstein metric with transverse
/// Einstein constant `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEinsteinConstants {
    pub tau: f64,
    pub lambda: f64,
    pub nu: f64,
    pub m: usize,
}

pub fn eta_einstein_map(tau: f64, m: usize) -> EtaEinsteinConstants {
    EtaEinsteinConstants { tau, lambda: tau - 2.0, nu: (2 * m + 2) as f64 - tau, m }
}

/// Ricci potential `h` with `Ric^T(dη) - (2m+2) dη = i∂∂̄h` and
/// `∫ (e^h - 1) (dη)^m ∧ η = 0`, plus the residuals of both routes.
#[derive(Clone, Debug)]
pub struct RicciPotential {
    pub h: BasicFunction,
    /// max-norm gap between the Poisson solution and `-(2m+2)ψ - log ρ + c`.
    pub closed_form_gap: f64,
    /// max-norm of `i∂∂̄h - (Ric^T - (2m+2)dη)` as densities against `dη₀`.
    pub ddbar_residual: f64,
    /// `|∫ (e^h - 1)| / V`.
    pub normalization_residual: f64,
    /// Mean of `s^T - m(2m+2)` under the background measure.
    pub class_residual: f64,
}

/// Immutable background: grid, basis, background form and fiber data.
#[derive(Debug)]
pub struct TransverseModel {
    config: ModelConfig,
    m: usize,
    grid: SphereGrid,
    node_weights: Vec<f64>,
    psi: BasicFunction,
    background_density: Vec<f64>,
    volume: f64,
    ricci: RicciPotential,
    complex_eigenvalues: Vec<f64>,
}

impl TransverseModel {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// `2m + 2`.
    pub fn einstein_constant(&self) -> f64 {
        (2 * self.m + 2) as f64
    }

    pub fn grid(&self) -> &SphereGrid {
        &self.grid
    }

    pub fn band_limit(&self) -> usize {
        self.grid.band_limit()
    }

    pub fn even_only(&self) -> bool {
        self.grid.even_only()
    }

    pub fn fiber_length(&self) -> f64 {
        self.config.fiber_length
    }

    /// Unit-sphere quadrature weights (sum `4 pi`).
    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    /// Background perturbation potential `ψ`.
    pub fn background_potential(&self) -> &BasicFunction {
        &self.psi
    }

    /// Density of `dη` against the canonical `dη₀`, per node.
    pub fn background_density(&self) -> &[f64] {
        &self.background_density
    }

    /// `V = ∫ (dη)^m ∧ η`.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// The normalized Ricci potential `h` of the background.
    pub fn ricci_potential(&self) -> &BasicFunction {
        &self.ricci.h
    }

    pub fn ricci_report(&self) -> &RicciPotential {
        &self.ricci
    }

    /// Eigenvalues of `□₀` per basis mode.
    pub fn complex_eigenvalues(&self) -> &[f64] {
        &self.complex_eigenvalues
    }

    /// Lifted measure weight of each node for a transverse form of the given density.
    pub fn lifted_measure(&self, density: &[f64]) -> Vec<f64> {
        let scale = self.config.fiber_length / 4.0;
        self.node_weights.iter().zip(density).map(|(w, r)| scale * w * r).collect()
    }

    pub fn zero(&self) -> BasicFunction {
        self.function_unchecked(vec![0.0; self.grid.n_modes()])
    }

    pub fn constant(&self, c: f64) -> BasicFunction {
        self.zero().shifted(c)
    }

    fn function_unchecked(&self, coeffs: Vec<f64>) -> BasicFunction {
        BasicFunction {
            values: self.grid.synthesize(&coeffs),
            coeffs,
            band_limit: self.grid.band_limit(),
            even_only: self.grid.even_only(),
        }
    }

    pub fn function_from_coeffs(&self, coeffs: Vec<f64>) -> Result<BasicFunction> {
        if coeffs.len() != self.grid.n_modes() {
            return Err(Error::Mismatch(format!(
                "expected {} coefficients, got {}",
                self.grid.n_modes(),
                coeffs.len()
            )));
        }
        Ok(self.function_unchecked(coeffs))
    }

    /// L2 projection of arbitrary grid values onto the band-limited space.
    pub fn project(&self, values: &[f64]) -> BasicFunction {
        self.function_unchecked(self.grid.analyze(values))
    }

    /// `amplitude * Y_lm`.
    pub fn harmonic(&self, degree: usize, order: i64, amplitude: f64) -> Result<BasicFunction> {
        let idx = self
            .grid
            .mode_index(degree, order)
            .ok_or_else(|| Error::Mismatch(format!("mode ({degree}, {order}) is not in the model basis")))?;
        let mut c = vec![0.0; self.grid.n_modes()];
        c[idx] = amplitude;
        Ok(self.function_unchecked(c))
    }

    /// Evaluates a function at an arbitrary quotient point.
    pub fn eval_at(&self, f: &BasicFunction, theta: f64, phi: f64) -> f64 {
        self.grid.eval_point(f.coeffs(), theta, phi)
    }

    /// `□₀ f` as coefficients.
    pub fn canonical_laplacian_coeffs(&self, f: &BasicFunction) -> Vec<f64> {
        f.coeffs().iter().zip(&self.complex_eigenvalues).map(|(c, l)| c * l).collect()
    }

    /// Density of `dη + i∂∂̄u` against `dη₀`.
    pub fn density_of(&self, u: &BasicFunction) -> Vec<f64> {
        let lap = self.grid.synthesize(&self.canonical_laplacian_coeffs(u));
        self.background_density.iter().zip(&lap).map(|(r, l)| r - l).collect()
    }

    pub fn check_function(&self, u: &BasicFunction) -> Result<()> {
        if u.band_limit() != self.band_limit() || u.even_only() != self.even_only() {
            return Err(Error::Mismatch(format!(
                "function has band {} / even {}, model has band {} / even {}",
                u.band_limit(),
                u.even_only(),
                self.band_limit(),
                self.even_only()
            )));
        }
        Ok(())
    }
}

/// Builds the model `dη = dη₀ + i∂∂̄ψ` and its Ricci potential.
pub fn build_model(config: ModelConfig) -> Result<Arc<TransverseModel>> {
    let n = config.band_limit;
    if n < MIN_BAND_LIMIT {
        return Err(Error::Config(format!("band_limit must be >= {MIN_BAND_LIMIT}, got {n}")));
    }
    if !(config.fiber_length.is_finite() && config.fiber_length > 0.0) {
        return Err(Error::Config(format!("fiber_length must be positive, got {}", config.fiber_length)));
    }
    let even = config.symmetry_mode == SymmetryMode::Even;
    let grid = SphereGrid::new(n, even);
    let mut psi_coeffs = vec![0.0; grid.n_modes()];
    for &(degree, order, amplitude) in &config.perturbation {
        if degree > n || order.unsigned_abs() as usize > degree {
            return Err(Error::Config(format!("invalid perturbation mode ({degree}, {order}) for band {n}")));
        }
        if !amplitude.is_finite() {
            return Err(Error::Config(format!("non-finite amplitude for mode ({degree}, {order})")));
        }
        if even && degree % 2 == 1 {
            if amplitude == 0.0 {
                continue;
            }
            return Err(Error::OddPerturbation { degree, order });
        }
        let idx = grid.mode_index(degree, order).expect("mode present");
        psi_coeffs[idx] += amplitude;
    }
    let complex_eigenvalues: Vec<f64> = grid.unit_laplacian_eigenvalues().into_iter().map(|l| 2.0 * l).collect();
    let lap_psi: Vec<f64> = psi_coeffs.iter().zip(&complex_eigenvalues).map(|(c, l)| c * l).collect();
    let lap_vals = grid.synthesize(&lap_psi);
    let background_density: Vec<f64> = lap_vals.iter().map(|l| 1.0 - l).collect();
    let (node, value) =
        background_density
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    if value <= 0.0 {
        return Err(Error::BackgroundNotPositive { node, value });
    }
    let node_weights = grid.node_weights();
    let psi =
        BasicFunction { values: grid.synthesize(&psi_coeffs), coeffs: psi_coeffs, band_limit: n, even_only: even };
    let m = TRANSVERSE_DIM;
    let mut model = TransverseModel {
        config,
        m,
        grid,
        node_weights,
        psi: psi.clone(),
        background_density: background_density.clone(),
        volume: 0.0,
        ricci: RicciPotential {
            h: psi.scaled(0.0),
            closed_form_gap: 0.0,
            ddbar_residual: 0.0,
            normalization_residual: 0.0,
            class_residual: 0.0,
        },
        complex_eigenvalues,
    };
    let measure = model.lifted_measure(&background_density);
    model.volume = measure.iter().sum();
    model.ricci = ricci_potential_for(&model, &psi, &background_density)?;
    Ok(Arc::new(model))
}

/// Pointwise `s^T` of the transverse form with density `ρ` against `dη₀`
/// (`m = 1`): `s^T = ((2m+2) + □₀ log ρ) / ρ`.
pub(crate) fn scalar_curvature_values(model: &TransverseModel, density: &[f64]) -> Vec<f64> {
    let log_rho: Vec<f64> = density.iter().map(|r| r.ln()).collect();
    let lc = model.grid.analyze(&log_rho);
    let lap: Vec<f64> = lc.iter().zip(&model.complex_eigenvalues).map(|(c, l)| c * l).collect();
    let lap_vals = model.grid.synthesize(&lap);
    let ric0 = model.einstein_constant();
    density.iter().zip(&lap_vals).map(|(r, l)| (ric0 + l) / r).collect()
}

/// Ricci potential of the transverse form `dη₀ + i∂∂̄φ` where `φ` is the total
/// potential relative to the canonical form and `density` its density.
pub(crate) fn ricci_potential_for(
    model: &TransverseModel,
    total_potential: &BasicFunction,
    density: &[f64],
) -> Result<RicciPotential> {
    let grid = &model.grid;
    let ric0 = model.einstein_constant();
    let m = model.m as f64;
    let measure = model.lifted_measure(density);
    let volume: f64 = measure.iter().sum();
    let s = scalar_curvature_values(model, density);

    let class_residual = measure.iter().zip(&s).map(|(w, s)| w * (s - m * ric0)).sum::<f64>() / volume;
    if class_residual.abs() > CLASS_TOLERANCE {
        return Err(Error::ClassCondition { residual: class_residual });
    }

    // Poisson route: □₀ h = ((2m+2) - s^T) ρ
    let rhs: Vec<f64> = s.iter().zip(density).map(|(s, r)| (ric0 - s) * r).collect();
    let rc = grid.analyze(&rhs);
    let mut hc: Vec<f64> =
        rc.iter().zip(&model.complex_eigenvalues).map(|(c, l)| if *l > 0.0 { c / l } else { 0.0 }).collect();
    let h_vals = grid.synthesize(&hc);
    let c = normalization_shift(&measure, &h_vals, volume);
    hc[0] += c * (4.0 * PI).sqrt();
    let h = BasicFunction {
        values: h_vals.iter().map(|v| v + c).collect(),
        coeffs: hc,
        band_limit: grid.band_limit(),
        even_only: grid.even_only(),
    };

    // closed form: h = -(2m+2) φ - log ρ + const
    let closed: Vec<f64> = total_potential.values().iter().zip(density).map(|(p, r)| -ric0 * p - r.ln()).collect();
    let c2 = normalization_shift(&measure, &closed, volume);
    let closed_form_gap = h.values().iter().zip(&closed).fold(0.0f64, |a, (x, y)| a.max((x - y - c2).abs()));

    let lap_h =
        grid.synthesize(&h.coeffs().iter().zip(&model.complex_eigenvalues).map(|(c, l)| c * l).collect::<Vec<_>>());
    let ddbar_residual =
        lap_h.iter().zip(s.iter().zip(density)).fold(0.0f64, |a, (lh, (s, r))| a.max((-lh - (s - ric0) * r).abs()));
    let normalization_residual =
        (measure.iter().zip(h.values()).map(|(w, h)| w * (h.exp() - 1.0)).sum::<f64>() / volume).abs();
    Ok(RicciPotential { h, closed_form_gap, ddbar_residual, normalization_residual, class_residual })
}

fn normalization_shift(measure: &[f64], values: &[f64], volume: f64) -> f64 {
    let z: f64 = measure.iter().zip(values).map(|(w, v)| w * v.exp()).sum();
    -(z / volume).ln()
}

/// Recomputes the background Ricci potential with both routes.
pub fn compute_h(model: &TransverseModel) -> Result<RicciPotential> {
    ricci_potential_for(model, &model.psi, &model.background_density)
}

/// A potential `u` together with the cached geometry of `dη_u`.
#[derive(Debug)]
pub struct MetricState {
    model: Arc<TransverseModel>,
    potential: BasicFunction,
    density: Vec<f64>,
    ma_ratio: Vec<f64>,
    min_ratio: f64,
    measure: Vec<f64>,
    scalar_curvature: Option<(Vec<f64>, BasicFunction)>,
    mass: OnceLock<Option<Cholesky<f64, Dyn>>>,
}

impl Clone for MetricState {
    fn clone(&self) -> Self {
        Self {
            model: self.model.clone(),
            potential: self.potential.clone(),
            density: self.density.clone(),
            ma_ratio: self.ma_ratio.clone(),
            min_ratio: self.min_ratio,
            measure: self.measure.clone(),
            scalar_curvature: self.scalar_curvature.clone(),
            mass: OnceLock::new(),
        }
    }
}

pub fn metric_state(model: &Arc<TransverseModel>, u: BasicFunction) -> Result<MetricState> {
    model.check_function(&u)?;
    let density = model.density_of(&u);
    let ma_ratio: Vec<f64> = density.iter().zip(&model.background_density).map(|(a, b)| a / b).collect();
    let min_ratio = ma_ratio.iter().copied().fold(f64::INFINITY, f64::min);
    let measure = model.lifted_measure(&density);
    let scalar_curvature = if min_ratio > 0.0 {
        let s = scalar_curvature_values(model, &density);
        let proj = model.project(&s);
        Some((s, proj))
    } else {
        None
    };
    Ok(MetricState {
        model: model.clone(),
        potential: u,
        density,
        ma_ratio,
        min_ratio,
        measure,
        scalar_curvature,
        mass: OnceLock::new(),
    })
}

impl MetricState {
    pub fn model(&self) -> &Arc<TransverseModel> {
        &self.model
    }

    pub fn potential(&self) -> &BasicFunction {
        &self.potential
    }

    /// Density of `dη_u` against `dη₀`.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    /// `(dη_u)^m / (dη)^m` per node.
    pub fn ma_ratio(&self) -> &[f64] {
        &self.ma_ratio
    }

    pub fn min_ratio(&self) -> f64 {
        self.min_ratio
    }

    pub fn is_positive(&self) -> bool {
        self.min_ratio > 0.0
    }

    /// Per-node weights of `(dη_u)^m ∧ η`.
    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    fn require_positive(&self) -> Result<()> {
        if self.is_positive() {
            Ok(())
        } else {
            Err(Error::NotPositive { min_ratio: self.min_ratio })
        }
    }

    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        self.measure.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// `∫_S f (dη_u)^m ∧ η`.
    pub fn integrate(&self, f: &BasicFunction) -> f64 {
        self.integrate_values(f.values())
    }

    /// `∫ (dη_u)^m ∧ η`.
    pub fn volume(&self) -> f64 {
        self.measure.iter().sum()
    }

    /// Gram matrix of the basis under `(dη_u)^m ∧ η`.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let scale = self.model.fiber_length() / 4.0;
        self.model.grid.gram_values(&self.density) * scale
    }

    fn mass_factor(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.require_positive()?;
        self.mass
            .get_or_init(|| Cholesky::new(self.mass_matrix()))
            .as_ref()
            .ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))
    }

    /// Projection, orthogonal for `(dη_u)^m ∧ η`, of a weak-form right-hand
    /// side `b_a = ⟨Y_a, g⟩` onto the band-limited space.
    pub fn solve_mass(&self, rhs: &[f64]) -> Result<BasicFunction> {
        let chol = self.mass_factor()?;
        let x = chol.solve(&DVector::from_column_slice(rhs));
        self.model.function_from_coeffs(x.as_slice().to_vec())
    }

    /// `□_u f` with nonnegative spectrum, as the Galerkin projection in the
    /// state's own measure.
    pub fn complex_laplacian(&self, f: &BasicFunction) -> Result<BasicFunction> {
        self.require_positive()?;
        self.model.check_function(f)?;
        let scale = self.model.fiber_length() / 4.0;
        let rhs: Vec<f64> = self.model.canonical_laplacian_coeffs(f).iter().map(|c| c * scale).collect();
        self.solve_mass(&rhs)
    }

    /// Basic de Rham Laplacian of `g_u`, assembled independently from the
    /// Dirichlet form `∫ g_u(∇f, ∇Y_a)`.
    pub fn de_rham_laplacian(&self, f: &BasicFunction) -> Result<BasicFunction> {
        self.require_positive()?;
        self.model.check_function(f)?;
        let stiffness =
            self.model.grid.gram_gradients(&vec![1.0; self.model.grid.n_nodes()]) * self.model.fiber_length();
        let rhs = &stiffness * DVector::from_column_slice(f.coeffs());
        self.solve_mass(rhs.as_slice())
    }

    /// `s^T(dη_u)`.
    pub fn transverse_scalar_curvature(&self) -> Result<&BasicFunction> {
        self.require_positive()?;
        Ok(&self.scalar_curvature.as_ref().expect("positive state caches curvature").1)
    }

    /// Pointwise `s^T` on the grid, without band projection.
    pub fn scalar_curvature_values(&self) -> Result<&[f64]> {
        self.require_positive()?;
        Ok(&self.scalar_curvature.as_ref().expect("positive state caches curvature").0)
    }

    /// Ricci potential of `dη_u` itself (used for the weighted Laplacian).
    pub fn ricci_potential(&self) -> Result<RicciPotential> {
        self.require_positive()?;
        let total = self.model.psi.add_scaled(1.0, &self.potential);
        ricci_potential_for(&self.model, &total, &self.density)
    }
}

/// Lower bound on the full Sasaki Ricci tensor of `g_{u,μ}` with `μ = 1/t`,
/// relative to `g_{u,μ}`: `min(2m, μ min s^T - 2)`.
pub fn sasaki_ricci_bound(state: &MetricState, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("t must lie in (0, 1], got {t}")));
    }
    let s = state.scalar_curvature_values()?;
    let kappa = s.iter().copied().fold(f64::INFINITY, f64::min);
    let mu = 1.0 / t;
    let m = state.model().m() as f64;
    Ok((2.0 * m).min(mu * kappa - 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical(n: usize) -> Arc<TransverseModel> {
        build_model(ModelConfig::canonical(n, SymmetryMode::Full)).unwrap()
    }

    #[test]
    fn canonical_volume_is_two_pi_squared() {
        let model = canonical(16);
        assert!((model.volume() - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn canonical_ricci_potential_vanishes() {
        let model = canonical(16);
        assert!(model.ricci_potential().max_abs() < 1e-12);
    }

    #[test]
    fn perturbed_density_matches_closed_form() {
        let model = build_model(ModelConfig::canonical(32, SymmetryMode::Full).with_perturbation(2, 0, 0.05)).unwrap();
        // i∂∂̄ of a degree-2 harmonic has trace -12 ψ on the canonical quotient
        let y20 = (5.0 / (4.0 * PI)).sqrt();
        for node in (0..model.grid().n_nodes()).step_by(97) {
            let (theta, _) = model.grid().node_angles(node);
            let psi = 0.05 * y20 * 0.5 * (3.0 * theta.cos().powi(2) - 1.0);
            assert!((model.background_density()[node] - (1.0 - 12.0 * psi)).abs() < 1e-13);
        }
    }

    #[test]
    fn perturbed_density_matches_finite_differences() {
        // tr i∂∂̄ψ = (1/2) Δ_{g₀} ψ = 2 Δ_unit ψ for the radius-1/2 quotient
        let model = build_model(ModelConfig::canonical(16, SymmetryMode::Full).with_perturbation(2, 0, 0.05)).unwrap();
        let psi = |t: f64| 0.05 * (5.0 / (4.0 * PI)).sqrt() * 0.5 * (3.0 * t.cos().powi(2) - 1.0);
        let h = 1e-4;
        for node in (0..model.grid().n_nodes()).step_by(131) {
            let (t, _) = model.grid().node_angles(node);
            let d2 = (psi(t + h) - 2.0 * psi(t) + psi(t - h)) / (h * h);
            let d1 = (psi(t + h) - psi(t - h)) / (2.0 * h);
            let lap_unit = d2 + t.cos() / t.sin() * d1;
            let expect = 1.0 + 2.0 * lap_unit;
            assert!((model.background_density()[node] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn large_perturbation_is_rejected() {
        let err =
            build_model(ModelConfig::canonical(32, SymmetryMode::Full).with_perturbation(2, 0, 10.0)).unwrap_err();
        match err {
            Error::BackgroundNotPositive { value, .. } => assert!(value < 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn odd_perturbation_rejected_in_even_mode() {
        let err =
            build_model(ModelConfig::canonical(16, SymmetryMode::Even).with_perturbation(3, 1, 0.01)).unwrap_err();
        assert!(matches!(err, Error::OddPerturbation { degree: 3, order: 1 }));
    }

    #[test]
    fn small_band_limit_rejected() {
        assert!(matches!(build_model(ModelConfig::canonical(6, SymmetryMode::Full)), Err(Error::Config(_))));
    }

    #[test]
    fn config_parses_strictly() {
        let cfg =
            ModelConfig::from_toml_str("band_limit = 32\nsymmetry_mode = \"even\"\nperturbation = [[2, 0, 0.05]]\n")
                .unwrap();
        assert_eq!(cfg.band_limit, 32);
        assert_eq!(cfg.symmetry_mode, SymmetryMode::Even);
        assert_eq!(cfg.perturbation, vec![(2, 0, 0.05)]);
        assert!((cfg.fiber_length - 2.0 * PI).abs() < 1e-15);
        assert!(ModelConfig::from_toml_str("band_limit = 32\nbogus = 1\n").is_err());
    }

    #[test]
    fn canonical_state_has_unit_ratio() {
        let model = canonical(16);
        let st = metric_state(&model, model.zero()).unwrap();
        assert!(st.is_positive());
        assert!(st.ma_ratio().iter().all(|r| (r - 1.0).abs() < 1e-15));
        let s = st.transverse_scalar_curvature().unwrap();
        assert!(s.values().iter().all(|v| (v - 4.0).abs() < 1e-12));
    }

    #[test]
    fn ratio_linear_response_of_y20() {
        let model = canonical(32);
        let eps = 0.01;
        let u = model.harmonic(2, 0, eps).unwrap();
        let st = metric_state(&model, u.clone()).unwrap();
        for (r, y) in st.ma_ratio().iter().zip(u.values()) {
            // exact for m = 1: ratio = 1 - 12 u
            assert!((r - (1.0 - 12.0 * y)).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_potential_is_flagged() {
        let model = canonical(16);
        let st = metric_state(&model, model.harmonic(2, 0, 2.0).unwrap()).unwrap();
        assert!(!st.is_positive());
        assert!(st.transverse_scalar_curvature().is_err());
        assert!(st.complex_laplacian(&model.zero()).is_err());
    }

    #[test]
    fn complex_laplacian_eigenvalues() {
        let model = canonical(16);
        let st = metric_state(&model, model.zero()).unwrap();
        let c = st.complex_laplacian(&model.constant(3.0)).unwrap();
        assert!(c.max_abs() < 1e-12);
        for (l, expect) in [(1usize, 4.0), (2, 12.0)] {
            let y = model.harmonic(l, 0, 1.0).unwrap();
            let ly = st.complex_laplacian(&y).unwrap();
            assert!(ly.max_abs_diff(&y.scaled(expect)) < 1e-10);
        }
    }

    #[test]
    fn integrate_canonical() {
        let model = canonical(16);
        let st = metric_state(&model, model.zero()).unwrap();
        assert!((st.integrate(&model.constant(1.0)) - 2.0 * PI * PI).abs() < 1e-12);
        assert!(st.integrate(&model.harmonic(2, 0, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn eta_einstein_constants() {
        let c = eta_einstein_map(4.0, 1);
        assert_eq!((c.lambda, c.nu), (2.0, 0.0));
        let c = eta_einstein_map(2.0, 1);
        assert_eq!((c.lambda, c.nu), (0.0, 2.0));
    }

    #[test]
    fn ricci_bound_canonical_half() {
        let model = canonical(16);
        let st = metric_state(&model, model.zero()).unwrap();
        let b = sasaki_ricci_bound(&st, 0.5).unwrap();
        assert!(b >= 2.0 - 1e-12);
        assert!(sasaki_ricci_bound(&st, 0.0).is_err());
    }

    #[test]
    fn shifted_matches_constant_mode() {
        let model = canonical(8);
        let f = model.harmonic(3, -2, 0.3).unwrap().shifted(1.5);
        let g = model.function_from_coeffs(f.coeffs().to_vec()).unwrap();
        assert!(f.max_abs_diff(&g) < 1e-13);
    }
}
