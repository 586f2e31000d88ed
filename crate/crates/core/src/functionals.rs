//! Energy functionals `L`, `M`, `I`, `J` on the space of admissible potentials
//! and the machine check of their identities.

use crate::error::{Error, Result};
use crate::model::{metric_state, BasicFunction, TransverseModel};
use crate::sampling::{random_potential, seeded_rng, DEFAULT_MARGIN};
use crate::sphere::gauss_legendre;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

pub const DEFAULT_PATH_ORDER: usize = 8;
pub const DEFAULT_PATH_TOLERANCE: f64 = 1e-10;
pub const MAX_DOUBLINGS: usize = 6;

/// Tolerance on cocycle, translation and path-independence residuals.
pub const IDENTITY_TOLERANCE: f64 = 1e-7;
/// Allowed negative slack in the inequality chain.
pub const CHAIN_TOLERANCE: f64 = 1e-9;
pub const DERIVATIVE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FunctionalKind {
    L,
    M,
    I,
    J,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reparametrization {
    #[default]
    Identity,
    /// `τ = σ²`, a monotone but non-affine change of parameter.
    Quadratic,
}

/// A path `φ_s = φ + τ(φ′ - φ) + τ(1 - τ)χ` with `τ = τ((s - a)/(b - a))`.
#[derive(Clone, Debug)]
pub struct FunctionalPath {
    pub start: BasicFunction,
    pub end: BasicFunction,
    pub detour: Option<BasicFunction>,
    pub interval: (f64, f64),
    pub reparametrization: Reparametrization,
    /// Initial Gauss-Legendre order in `s`; doubled until converged.
    pub order: usize,
    pub tolerance: f64,
}

impl FunctionalPath {
    pub fn linear(start: &BasicFunction, end: &BasicFunction) -> Self {
        Self {
            start: start.clone(),
            end: end.clone(),
            detour: None,
            interval: (0.0, 1.0),
            reparametrization: Reparametrization::Identity,
            order: DEFAULT_PATH_ORDER,
            tolerance: DEFAULT_PATH_TOLERANCE,
        }
    }

    pub fn with_detour(mut self, chi: BasicFunction) -> Self {
        self.detour = Some(chi);
        self
    }

    pub fn with_interval(mut self, a: f64, b: f64) -> Self {
        self.interval = (a, b);
        self
    }

    pub fn with_reparametrization(mut self, r: Reparametrization) -> Self {
        self.reparametrization = r;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    fn tau(&self, s: f64) -> (f64, f64) {
        let (a, b) = self.interval;
        let sigma = (s - a) / (b - a);
        match self.reparametrization {
            Reparametrization::Identity => (sigma, 1.0 / (b - a)),
            Reparametrization::Quadratic => (sigma * sigma, 2.0 * sigma / (b - a)),
        }
    }

    pub fn potential_at(&self, s: f64) -> BasicFunction {
        let (tau, _) = self.tau(s);
        let diff = self.end.add_scaled(-1.0, &self.start);
        let mut p = self.start.add_scaled(tau, &diff);
        if let Some(chi) = &self.detour {
            p = p.add_scaled(tau * (1.0 - tau), chi);
        }
        p
    }

    pub fn velocity_at(&self, s: f64) -> BasicFunction {
        let (tau, dtau) = self.tau(s);
        let mut v = self.end.add_scaled(-1.0, &self.start);
        if let Some(chi) = &self.detour {
            v = v.add_scaled(1.0 - 2.0 * tau, chi);
        }
        v.scaled(dtau)
    }

    /// Intermediate potentials on the order-`n` Gauss grid in `s`.
    pub fn nodes(&self, n: usize) -> Vec<(f64, BasicFunction)> {
        let (x, _) = gauss_legendre(n);
        let (a, b) = self.interval;
        x.iter()
            .map(|xi| {
                let s = a + 0.5 * (b - a) * (xi + 1.0);
                (s, self.potential_at(s))
            })
            .collect()
    }
}

#[derive(Clone, Copy)]
enum Integrand<'a> {
    L,
    M,
    /// `φ̇ (ρ_φ - ρ_s)` with the start density fixed.
    J(&'a [f64]),
}

fn min_ratio(model: &TransverseModel, density: &[f64]) -> f64 {
    density.iter().zip(model.background_density()).map(|(a, b)| a / b).fold(f64::INFINITY, f64::min)
}

fn integrand_at(model: &TransverseModel, path: &FunctionalPath, s: f64, kind: Integrand) -> Result<f64> {
    let phi = path.potential_at(s);
    let vel = path.velocity_at(s);
    let rho = model.density_of(&phi);
    let r = min_ratio(model, &rho);
    if r <= 0.0 {
        return Err(Error::InadmissiblePath { s, min_ratio: r });
    }
    let scale = model.fiber_length() / 4.0 / model.volume();
    let w = model.node_weights();
    let v = vel.values();
    let sum: f64 = match kind {
        Integrand::L => (0..rho.len()).map(|i| w[i] * v[i] * rho[i]).sum(),
        Integrand::M => {
            let grid = model.grid();
            let log_rho: Vec<f64> = rho.iter().map(|x| x.ln()).collect();
            let lc = grid.analyze(&log_rho);
            let lap: Vec<f64> = lc.iter().zip(model.complex_eigenvalues()).map(|(c, l)| c * l).collect();
            let lap = grid.synthesize(&lap);
            let ric0 = model.einstein_constant();
            let target = model.m() as f64 * ric0;
            // (s^T - m(2m+2)) ρ = (2m+2) + □₀ log ρ - m(2m+2) ρ
            -(0..rho.len()).map(|i| w[i] * v[i] * (ric0 + lap[i] - target * rho[i])).sum::<f64>()
        }
        Integrand::J(rho0) => (0..rho.len()).map(|i| w[i] * v[i] * (rho0[i] - rho[i])).sum(),
    };
    Ok(scale * sum)
}

fn quadrature(model: &TransverseModel, path: &FunctionalPath, n: usize, kind: Integrand) -> Result<f64> {
    let (x, w) = gauss_legendre(n);
    let (a, b) = path.interval;
    let half = 0.5 * (b - a);
    let mut total = 0.0;
    for (xi, wi) in x.iter().zip(&w) {
        let s = a + half * (xi + 1.0);
        total += wi * half * integrand_at(model, path, s, kind)?;
    }
    Ok(total)
}

fn path_integral(model: &TransverseModel, path: &FunctionalPath, kind: Integrand) -> Result<f64> {
    model.check_function(&path.start)?;
    model.check_function(&path.end)?;
    if let Some(chi) = &path.detour {
        model.check_function(chi)?;
    }
    let mut n = path.order.max(2);
    let mut prev = quadrature(model, path, n, kind)?;
    let mut change = f64::INFINITY;
    for _ in 0..MAX_DOUBLINGS {
        n *= 2;
        let cur = quadrature(model, path, n, kind)?;
        change = (cur - prev).abs();
        if change < path.tolerance {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::QuadratureNotConverged { doublings: MAX_DOUBLINGS, change })
}

fn require_admissible(model: &TransverseModel, u: &BasicFunction) -> Result<Vec<f64>> {
    model.check_function(u)?;
    let rho = model.density_of(u);
    let r = min_ratio(model, &rho);
    if r <= 0.0 {
        return Err(Error::NotPositive { min_ratio: r });
    }
    Ok(rho)
}

/// `(1/V) ∫ f g (dη_ρ)^m ∧ η` for a density `ρ`.
fn weighted_mean(model: &TransverseModel, f: &[f64], density: &[f64]) -> f64 {
    let scale = model.fiber_length() / 4.0 / model.volume();
    model.node_weights().iter().zip(f).zip(density).map(|((w, f), r)| w * f * r).sum::<f64>() * scale
}

pub fn functional_l(model: &TransverseModel, path: &FunctionalPath) -> Result<f64> {
    path_integral(model, path, Integrand::L)
}

pub fn functional_m(model: &TransverseModel, path: &FunctionalPath) -> Result<f64> {
    path_integral(model, path, Integrand::M)
}

/// `I(φ, φ′) = (1/V) ∫ (φ′ - φ)((dη_φ)^m - (dη_φ′)^m) ∧ η`.
pub fn functional_i(model: &TransverseModel, phi: &BasicFunction, phi2: &BasicFunction) -> Result<f64> {
    let r0 = require_admissible(model, phi)?;
    let r1 = require_admissible(model, phi2)?;
    let diff: Vec<f64> = phi2.values().iter().zip(phi.values()).map(|(a, b)| a - b).collect();
    let dr: Vec<f64> = r0.iter().zip(&r1).map(|(a, b)| a - b).collect();
    Ok(weighted_mean(model, &diff, &dr))
}

/// `J = -L + (1/V) ∫ (φ′ - φ)(dη_φ)^m ∧ η`, with `L` taken along `path`.
pub fn functional_j(model: &TransverseModel, path: &FunctionalPath) -> Result<f64> {
    let r0 = require_admissible(model, &path.start)?;
    let l = functional_l(model, path)?;
    let diff: Vec<f64> = path.end.values().iter().zip(path.start.values()).map(|(a, b)| a - b).collect();
    Ok(-l + weighted_mean(model, &diff, &r0))
}

/// `J` from its defining path integral.
pub fn functional_j_path(model: &TransverseModel, path: &FunctionalPath) -> Result<f64> {
    let r0 = require_admissible(model, &path.start)?;
    path_integral(model, path, Integrand::J(&r0))
}

/// Closed form of `L` along the linear segment (the integrand is affine in `s`).
pub fn linear_l(model: &TransverseModel, phi: &BasicFunction, phi2: &BasicFunction) -> f64 {
    let r0 = model.density_of(phi);
    let r1 = model.density_of(phi2);
    let diff: Vec<f64> = phi2.values().iter().zip(phi.values()).map(|(a, b)| a - b).collect();
    let mid: Vec<f64> = r0.iter().zip(&r1).map(|(a, b)| 0.5 * (a + b)).collect();
    weighted_mean(model, &diff, &mid)
}

/// Evaluates one functional; `path` defaults to the linear segment.
pub fn evaluate_functional(
    kind: FunctionalKind,
    model: &TransverseModel,
    phi: &BasicFunction,
    phi2: &BasicFunction,
    path: Option<&FunctionalPath>,
) -> Result<f64> {
    let default;
    let path = match path {
        Some(p) => {
            if p.start.max_abs_diff(phi) != 0.0 || p.end.max_abs_diff(phi2) != 0.0 {
                return Err(Error::Mismatch("path endpoints differ from the arguments".into()));
            }
            p
        }
        None => {
            default = FunctionalPath::linear(phi, phi2);
            &default
        }
    };
    require_admissible(model, phi)?;
    require_admissible(model, phi2)?;
    match kind {
        FunctionalKind::L => functional_l(model, path),
        FunctionalKind::M => functional_m(model, path),
        FunctionalKind::I => functional_i(model, phi, phi2),
        FunctionalKind::J => functional_j(model, path),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Must be small in magnitude.
    Residual,
    /// Must be nonnegative up to the tolerance.
    Margin,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub sample: usize,
    pub identity: String,
    pub kind: CheckKind,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityRecord {
    fn residual(sample: usize, identity: &str, value: f64, tolerance: f64) -> Self {
        Self {
            sample,
            identity: identity.into(),
            kind: CheckKind::Residual,
            value,
            tolerance,
            pass: value.is_finite() && value.abs() < tolerance,
        }
    }

    fn margin(sample: usize, identity: &str, value: f64, tolerance: f64) -> Self {
        Self {
            sample,
            identity: identity.into(),
            kind: CheckKind::Margin,
            value,
            tolerance,
            pass: value.is_finite() && value >= -tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalValues {
    pub sample: usize,
    pub l: f64,
    pub m: f64,
    pub i: f64,
    pub j: f64,
}

/// How often each side of `I <= (m+1)(I-J) <= mI` is attained with equality.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ChainBinding {
    pub samples: usize,
    pub lower_binding: usize,
    pub upper_binding: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub t: f64,
    pub step: f64,
    pub finite_difference: f64,
    pub integral: f64,
    pub error: f64,
    /// Error with the step halved.
    pub error_half_step: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub seed: u64,
    pub samples: usize,
    pub values: Vec<FunctionalValues>,
    pub records: Vec<IdentityRecord>,
    pub chain_binding: ChainBinding,
    pub derivative_check: Option<DerivativeCheck>,
    pub all_pass: bool,
}

impl FunctionalReport {
    /// Largest `|value|` per identity (residuals) or smallest value (margins).
    pub fn worst(&self, identity: &str) -> Option<f64> {
        let mut it = self.records.iter().filter(|r| r.identity == identity).peekable();
        let kind = it.peek()?.kind;
        Some(match kind {
            CheckKind::Residual => it.fold(0.0, |a, r| a.max(r.value.abs())),
            CheckKind::Margin => it.fold(f64::INFINITY, |a, r| a.min(r.value)),
        })
    }

    pub fn identities(&self) -> Vec<String> {
        let mut v: Vec<String> = Vec::new();
        for r in &self.records {
            if !v.contains(&r.identity) {
                v.push(r.identity.clone());
            }
        }
        v
    }
}

/// One randomized input for the identity suite.
#[derive(Clone, Debug)]
pub struct IdentitySample {
    pub a: BasicFunction,
    pub b: BasicFunction,
    pub c: BasicFunction,
    pub shift1: f64,
    pub shift2: f64,
    /// Detour used for the path-independence checks between `a` and `b`.
    pub detour: BasicFunction,
}

/// Draws `count` samples from a seeded generator.
pub fn sample_identity_inputs(model: &TransverseModel, count: usize, seed: u64) -> Vec<IdentitySample> {
    let mut rng = seeded_rng(seed);
    (0..count)
        .map(|_| {
            let a = random_potential(model, &mut rng, DEFAULT_MARGIN);
            let b = random_potential(model, &mut rng, DEFAULT_MARGIN);
            let c = random_potential(model, &mut rng, DEFAULT_MARGIN);
            let shift1 = rng.random_range(-1.0..1.0);
            let shift2 = rng.random_range(-1.0..1.0);
            let chi = random_potential(model, &mut rng, DEFAULT_MARGIN);
            let detour = admissible_detour(model, &a, &b, chi);
            IdentitySample { a, b, c, shift1, shift2, detour }
        })
        .collect()
}

/// Samples built from given potentials (e.g. the nodes of a solved family):
/// each consecutive triple becomes `(a, b, c)`, with seeded shifts and detour.
pub fn identity_inputs_from(model: &TransverseModel, potentials: &[BasicFunction], seed: u64) -> Vec<IdentitySample> {
    let mut rng = seeded_rng(seed);
    potentials
        .windows(3)
        .map(|w| {
            let (a, b, c) = (w[0].clone(), w[1].clone(), w[2].clone());
            let shift1 = rng.random_range(-1.0..1.0);
            let shift2 = rng.random_range(-1.0..1.0);
            let chi = random_potential(model, &mut rng, DEFAULT_MARGIN);
            let detour = admissible_detour(model, &a, &b, chi);
            IdentitySample { a, b, c, shift1, shift2, detour }
        })
        .collect()
}

/// Shrinks `chi` until the detour path from `a` to `b` keeps a positive margin.
fn admissible_detour(
    model: &TransverseModel,
    a: &BasicFunction,
    b: &BasicFunction,
    mut chi: BasicFunction,
) -> BasicFunction {
    loop {
        let path = FunctionalPath::linear(a, b).with_detour(chi.clone());
        let ok = (0..=32).all(|k| {
            let s = k as f64 / 32.0;
            min_ratio(model, &model.density_of(&path.potential_at(s))) >= 0.5 * DEFAULT_MARGIN
        });
        if ok {
            return chi;
        }
        chi = chi.scaled(0.5);
    }
}

/// `d/dt (I - J)(φ, φ_t)` by central differences along `φ_t = φ + tχ`,
/// compared with `(1/V) ∫ (φ_t - φ) □_{φ_t} χ (dη_{φ_t})^m ∧ η`.
pub fn derivative_identity_check(
    model: &Arc<TransverseModel>,
    phi: &BasicFunction,
    chi: &BasicFunction,
    t: f64,
    step: f64,
) -> Result<DerivativeCheck> {
    let gap = |s: f64| -> Result<f64> {
        let phi_s = phi.add_scaled(s, chi);
        let path = FunctionalPath::linear(phi, &phi_s);
        Ok(functional_i(model, phi, &phi_s)? - functional_j(model, &path)?)
    };
    let fd = |h: f64| -> Result<f64> { Ok((gap(t + h)? - gap(t - h)?) / (2.0 * h)) };
    let phi_t = phi.add_scaled(t, chi);
    let state = metric_state(model, phi_t.clone())?;
    let lap = state.complex_laplacian(chi)?;
    let diff = phi_t.add_scaled(-1.0, phi);
    let prod: Vec<f64> = diff.values().iter().zip(lap.values()).map(|(a, b)| a * b).collect();
    let integral = state.integrate_values(&prod) / model.volume();
    let finite_difference = fd(step)?;
    let error = (finite_difference - integral).abs();
    let error_half_step = (fd(0.5 * step)? - integral).abs();
    let tolerance = DERIVATIVE_TOLERANCE * integral.abs().max(1.0);
    Ok(DerivativeCheck {
        t,
        step,
        finite_difference,
        integral,
        error,
        error_half_step,
        tolerance,
        pass: error < tolerance,
    })
}

fn binds(margin: f64, scale: f64) -> bool {
    margin.abs() <= 1e-10 * (1.0 + scale.abs())
}

/// Runs every identity on every sample. Failures are recorded, not returned
/// as errors; evaluation errors (inadmissible paths) propagate.
pub fn verify_functional_identities(
    model: &Arc<TransverseModel>,
    samples: &[IdentitySample],
    seed: u64,
) -> Result<FunctionalReport> {
    let mut records = Vec::new();
    let mut values = Vec::new();
    let mut binding = ChainBinding::default();
    let tol = IDENTITY_TOLERANCE;
    let m = model.m() as f64;
    for (k, smp) in samples.iter().enumerate() {
        let (a, b, c) = (&smp.a, &smp.b, &smp.c);
        let ab = FunctionalPath::linear(a, b);
        let bc = FunctionalPath::linear(b, c);
        let ac = FunctionalPath::linear(a, c);

        let l_ab = functional_l(model, &ab)?;
        let l_bc = functional_l(model, &bc)?;
        let l_ac = functional_l(model, &ac)?;
        let m_ab = functional_m(model, &ab)?;
        let m_bc = functional_m(model, &bc)?;
        let m_ac = functional_m(model, &ac)?;
        let i_ab = functional_i(model, a, b)?;
        let j_ab = functional_j(model, &ab)?;
        values.push(FunctionalValues { sample: k, l: l_ab, m: m_ab, i: i_ab, j: j_ab });

        records.push(IdentityRecord::residual(k, "l_cocycle", l_ab + l_bc - l_ac, tol));
        records.push(IdentityRecord::residual(k, "m_cocycle", m_ab + m_bc - m_ac, tol));

        let b_shift = b.shifted(smp.shift2);
        let a_shift = a.shifted(smp.shift1);
        let l_shift = functional_l(model, &FunctionalPath::linear(a, &b_shift))?;
        records.push(IdentityRecord::residual(k, "l_translation", l_shift - l_ab - smp.shift2, tol));
        let m_shift = functional_m(model, &FunctionalPath::linear(&a_shift, &b_shift))?;
        records.push(IdentityRecord::residual(k, "m_translation", m_shift - m_ab, tol));
        let i_shift = functional_i(model, a, &b_shift)?;
        records.push(IdentityRecord::residual(k, "i_translation", i_shift - i_ab, tol));
        let j_shift = functional_j(model, &FunctionalPath::linear(a, &b_shift))?;
        records.push(IdentityRecord::residual(k, "j_translation", j_shift - j_ab, tol));

        let detour = ab.clone().with_detour(smp.detour.clone());
        records.push(IdentityRecord::residual(k, "l_path_independence", functional_l(model, &detour)? - l_ab, tol));
        records.push(IdentityRecord::residual(k, "m_path_independence", functional_m(model, &detour)? - m_ab, tol));
        records.push(IdentityRecord::residual(k, "j_path_formula", functional_j_path(model, &detour)? - j_ab, tol));

        let warped = ab.clone().with_interval(-1.0, 2.0).with_reparametrization(Reparametrization::Quadratic);
        records.push(IdentityRecord::residual(k, "l_reparametrization", functional_l(model, &warped)? - l_ab, tol));
        records.push(IdentityRecord::residual(k, "m_reparametrization", functional_m(model, &warped)? - m_ab, tol));

        // J(a,b) + J(b,c) = J(a,c) - (1/V) ∫ (c - b)((dη_a)^m - (dη_b)^m) ∧ η
        let j_bc = functional_j(model, &bc)?;
        let j_ac = functional_j(model, &ac)?;
        let ra = model.density_of(a);
        let rb = model.density_of(b);
        let cb: Vec<f64> = c.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
        let dr: Vec<f64> = ra.iter().zip(&rb).map(|(x, y)| x - y).collect();
        let corr = weighted_mean(model, &cb, &dr);
        records.push(IdentityRecord::residual(k, "j_correction", j_ab + j_bc - j_ac + corr, tol));

        let lower = (m + 1.0) * (i_ab - j_ab) - i_ab;
        let upper = m * i_ab - (m + 1.0) * (i_ab - j_ab);
        records.push(IdentityRecord::margin(k, "chain_i_nonnegative", i_ab, CHAIN_TOLERANCE));
        records.push(IdentityRecord::margin(k, "chain_lower", lower, CHAIN_TOLERANCE));
        records.push(IdentityRecord::margin(k, "chain_upper", upper, CHAIN_TOLERANCE));
        binding.samples += 1;
        binding.lower_binding += usize::from(binds(lower, i_ab));
        binding.upper_binding += usize::from(binds(upper, i_ab));
    }

    let derivative_check = match model.harmonic(2, 0, 0.05) {
        Ok(chi) => Some(derivative_identity_check(model, &model.zero(), &chi, 0.5, 1e-3)?),
        Err(_) => None,
    };
    let all_pass = records.iter().all(|r| r.pass) && derivative_check.as_ref().is_none_or(|d| d.pass);
    Ok(FunctionalReport {
        seed,
        samples: samples.len(),
        values,
        records,
        chain_binding: binding,
        derivative_check,
        all_pass,
    })
}
