//! Newton continuation for the two Monge-Ampère families
//!
//! * `(s1)`: `(dη_u)^m / (dη)^m = exp(-t(2m+2)u + h)`
//! * `(s2)`: `(dη_u)^m / (dη)^m = exp(-t(2m+2)u - (2m+2)L(0,u) + h)`
//!
//! in log form `Φ₁ = log(ratio) + t(2m+2)u - h` and `Φ₂ = Φ₁ + (2m+2)L(0,u)`.
//! Newton works on the Galerkin projection of `Φ` onto the band-limited space.

use crate::error::{Error, Result};
use crate::functionals::{functional_i, functional_m, linear_l, FunctionalPath};
use crate::linalg::{generalized_symmetric_eigen, smallest_singular_value};
use crate::model::{metric_state, BasicFunction, MetricState, TransverseModel};
use crate::sampling::{random_perturbation, seeded_rng};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// An operator whose smallest singular value is below this is treated as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-8;

/// Path tolerance used for the `M` traces along a family.
const TRACE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Equation {
    S1,
    S2,
}

impl std::str::FromStr for Equation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s1" => Ok(Self::S1),
            "s2" => Ok(Self::S2),
            other => Err(Error::InvalidParameter(format!("unknown equation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Max-norm of the projected residual at convergence.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub shrink: f64,
    pub grow: f64,
    /// Newton solves needing at most this many iterations let the step grow.
    pub fast_iterations: usize,
    /// Maximum number of step halvings in the line search.
    pub max_halvings: usize,
    /// Solve on the complement of near-kernel modes (full-space diagnostics).
    pub project_near_kernel: bool,
    pub kernel_threshold: f64,
    /// Output nodes in `t`, beyond the start node.
    pub t_nodes: Vec<f64>,
    pub t_final: f64,
    /// Seeded perturbation added to the predictor at each stored node.
    pub seed: Option<u64>,
    pub seed_amplitude: f64,
    pub record_singular_values: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 30,
            initial_step: 0.1,
            min_step: 1e-4,
            max_step: 0.25,
            shrink: 0.5,
            grow: 1.5,
            fast_iterations: 3,
            max_halvings: 30,
            project_near_kernel: false,
            kernel_threshold: 1e-3,
            t_nodes: (1..=10).map(|k| k as f64 / 10.0).collect(),
            t_final: 1.0,
            seed: None,
            seed_amplitude: 1e-3,
            record_singular_values: true,
        }
    }
}

impl SolverOptions {
    pub fn with_step(mut self, dt: f64) -> Self {
        let k = (1.0 / dt).round() as usize;
        self.t_nodes = (1..=k).map(|i| i as f64 / k as f64).collect();
        self.initial_step = dt.min(self.max_step);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.tolerance > 0.0 && self.kernel_threshold > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.min_step > 0.0
            && self.min_step <= self.initial_step
            && self.initial_step <= self.max_step.max(self.initial_step))
        {
            return bad("step bounds must satisfy 0 < min_step <= initial_step");
        }
        if self.max_step < self.min_step {
            return bad("max_step must be >= min_step");
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0 && self.grow >= 1.0) {
            return bad("shrink must lie in (0,1) and grow must be >= 1");
        }
        if !(self.t_final > 0.0 && self.t_final <= 1.0) {
            return bad("t_final must lie in (0, 1]");
        }
        Ok(())
    }
}

fn einstein(model: &TransverseModel) -> f64 {
    model.einstein_constant()
}

fn raw_residual(state: &MetricState, t: f64, eqn: Equation) -> Result<Vec<f64>> {
    if !state.is_positive() {
        return Err(Error::NotPositive { min_ratio: state.min_ratio() });
    }
    let model = state.model();
    let c = einstein(model);
    let shift = match eqn {
        Equation::S1 => 0.0,
        Equation::S2 => c * linear_l(model, &model.zero(), state.potential()),
    };
    let h = model.ricci_potential().values();
    Ok(state
        .ma_ratio()
        .iter()
        .zip(state.potential().values())
        .zip(h)
        .map(|((r, u), h)| r.ln() + t * c * u - h + shift)
        .collect())
}

/// Band-limited projection of `Φ₁` or `Φ₂` at the state; `h` is the model's
/// normalized Ricci potential.
pub fn residual(state: &MetricState, t: f64, eqn: Equation) -> Result<BasicFunction> {
    Ok(state.model().project(&raw_residual(state, t, eqn)?))
}

/// `(dΦ)_u(δ) = -□_u δ + t(2m+2)δ [+ (2m+2)/V ∫ δ (dη_u)^m ∧ η]`, evaluated
/// on the grid and projected.
pub fn linearization(state: &MetricState, t: f64, eqn: Equation, delta: &BasicFunction) -> Result<BasicFunction> {
    if !state.is_positive() {
        return Err(Error::NotPositive { min_ratio: state.min_ratio() });
    }
    let model = state.model();
    model.check_function(delta)?;
    let c = einstein(model);
    let lap = model.grid().synthesize(&model.canonical_laplacian_coeffs(delta));
    let mean = match eqn {
        Equation::S1 => 0.0,
        Equation::S2 => c * state.integrate(delta) / model.volume(),
    };
    let vals: Vec<f64> =
        lap.iter().zip(state.density()).zip(delta.values()).map(|((l, r), d)| -l / r + t * c * d + mean).collect();
    Ok(model.project(&vals))
}

/// Matrix of the projected linearization in the coefficient basis.
pub fn jacobian_matrix(state: &MetricState, t: f64, eqn: Equation) -> Result<DMatrix<f64>> {
    if !state.is_positive() {
        return Err(Error::NotPositive { min_ratio: state.min_ratio() });
    }
    let model = state.model();
    let grid = model.grid();
    let c = einstein(model);
    let inv: Vec<f64> = state.density().iter().map(|r| 1.0 / r).collect();
    let a = grid.gram_values(&inv);
    let lam = model.complex_eigenvalues();
    let n = grid.n_modes();
    let mut j = DMatrix::from_fn(n, n, |r, col| -a[(r, col)] * lam[col]);
    for i in 0..n {
        j[(i, i)] += t * c;
    }
    if eqn == Equation::S2 {
        let scale = model.fiber_length() / 4.0;
        let q: Vec<f64> = grid.analyze(state.density()).iter().map(|v| v * scale).collect();
        let p0 = (4.0 * PI).sqrt();
        for col in 0..n {
            j[(0, col)] += c / model.volume() * p0 * q[col];
        }
    }
    Ok(j)
}

#[derive(Clone, Debug)]
pub struct LinearSolve {
    pub delta: BasicFunction,
    pub min_singular_value: f64,
    /// Number of near-kernel modes removed (0 without projection).
    pub projected_modes: usize,
}

/// Solves `(dΦ)_u(δ) = rhs`. With `project` set the system is posed in the
/// state's eigenbasis of `□_u` and modes with `|diagonal| < threshold` are
/// dropped; otherwise a singular operator is an error.
pub fn linearized_solve(
    state: &MetricState,
    t: f64,
    eqn: Equation,
    rhs: &BasicFunction,
    project: bool,
    threshold: f64,
) -> Result<LinearSolve> {
    let model = state.model();
    model.check_function(rhs)?;
    if project {
        return projected_solve(state, t, eqn, rhs, threshold);
    }
    let j = jacobian_matrix(state, t, eqn)?;
    let sigma = smallest_singular_value(&j);
    if sigma < SINGULAR_TOLERANCE {
        return Err(Error::SingularOperator { t, sigma_min: sigma });
    }
    let x = j
        .lu()
        .solve(&DVector::from_column_slice(rhs.coeffs()))
        .ok_or(Error::SingularOperator { t, sigma_min: sigma })?;
    Ok(LinearSolve {
        delta: model.function_from_coeffs(x.as_slice().to_vec())?,
        min_singular_value: sigma,
        projected_modes: 0,
    })
}

fn projected_solve(
    state: &MetricState,
    t: f64,
    eqn: Equation,
    rhs: &BasicFunction,
    threshold: f64,
) -> Result<LinearSolve> {
    let model = state.model();
    let c = einstein(model);
    let scale = model.fiber_length() / 4.0;
    let n = model.grid().n_modes();
    let stiff =
        DMatrix::from_diagonal(&DVector::from_iterator(n, model.complex_eigenvalues().iter().map(|l| l * scale)));
    let mass = state.mass_matrix();
    let eig = generalized_symmetric_eigen(&stiff, &mass)?;
    let v = &eig.vectors;
    // B = -K + t c M + [s2] (c/V) q qᵀ, expressed in the eigenbasis
    let mut b = DMatrix::from_diagonal(&DVector::from_iterator(n, eig.values.iter().map(|l| t * c - l)));
    if eqn == Equation::S2 {
        let ones = model.constant(1.0);
        let q = &mass * DVector::from_column_slice(ones.coeffs());
        let w = v.transpose() * q;
        b += (&w * w.transpose()) * (c / model.volume());
    }
    let keep: Vec<usize> = (0..n).filter(|&k| b[(k, k)].abs() >= threshold).collect();
    let dropped = n - keep.len();
    let bk = DMatrix::from_fn(keep.len(), keep.len(), |r, col| b[(keep[r], keep[col])]);
    let r_w = v.transpose() * (&mass * DVector::from_column_slice(rhs.coeffs()));
    let rk = DVector::from_iterator(keep.len(), keep.iter().map(|&k| r_w[k]));
    let sigma = bk.clone().symmetric_eigenvalues().iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
    let y = bk.lu().solve(&rk).ok_or(Error::SingularOperator { t, sigma_min: sigma })?;
    let mut coeffs = DVector::zeros(n);
    for (i, &k) in keep.iter().enumerate() {
        coeffs += v.column(k) * y[i];
    }
    Ok(LinearSolve {
        delta: model.function_from_coeffs(coeffs.as_slice().to_vec())?,
        min_singular_value: sigma,
        projected_modes: dropped,
    })
}

/// Smallest singular value of the projected linearization.
pub fn operator_min_singular_value(state: &MetricState, t: f64, eqn: Equation) -> Result<f64> {
    Ok(smallest_singular_value(&jacobian_matrix(state, t, eqn)?))
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub state: MetricState,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

fn residual_norm(state: &MetricState, t: f64, eqn: Equation) -> Result<(Vec<f64>, f64)> {
    let r = residual(state, t, eqn)?;
    let norm = r.max_abs();
    Ok((r.coeffs().to_vec(), norm))
}

/// Damped Newton iteration for one value of `t`.
pub fn newton_solve(
    model: &Arc<TransverseModel>,
    t: f64,
    eqn: Equation,
    guess: BasicFunction,
    opts: &SolverOptions,
) -> Result<NewtonOutcome> {
    let mut state = metric_state(model, guess)?;
    if !state.is_positive() {
        return Err(Error::PositivityLost { t });
    }
    let (mut rc, mut norm) = residual_norm(&state, t, eqn)?;
    let mut history = vec![norm];
    let mut iterations = 0;
    while norm >= opts.tolerance {
        if iterations >= opts.max_iterations {
            return Err(Error::NewtonDivergence { t, residual: norm });
        }
        let rhs = model.function_from_coeffs(rc.iter().map(|v| -v).collect())?;
        let delta = if opts.project_near_kernel {
            projected_solve(&state, t, eqn, &rhs, opts.kernel_threshold)?.delta
        } else {
            let j = jacobian_matrix(&state, t, eqn)?;
            match j.clone().lu().solve(&DVector::from_column_slice(rhs.coeffs())) {
                Some(x) if x.iter().all(|v| v.is_finite()) => model.function_from_coeffs(x.as_slice().to_vec())?,
                _ => {
                    return Err(Error::SingularOperator { t, sigma_min: smallest_singular_value(&j) });
                }
            }
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        let mut positive_seen = false;
        for _ in 0..=opts.max_halvings {
            let cand = metric_state(model, state.potential().add_scaled(alpha, &delta))?;
            if cand.is_positive() {
                positive_seen = true;
                let (c_rc, c_norm) = residual_norm(&cand, t, eqn)?;
                if c_norm < opts.tolerance || c_norm < (1.0 - 1e-4 * alpha) * norm {
                    accepted = Some((cand, c_rc, c_norm));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((s, c_rc, c_norm)) => {
                state = s;
                rc = c_rc;
                norm = c_norm;
            }
            None if !positive_seen => return Err(Error::PositivityLost { t }),
            None => return Err(Error::NewtonDivergence { t, residual: norm }),
        }
        iterations += 1;
        history.push(norm);
    }
    Ok(NewtonOutcome { state, iterations, residual_history: history })
}

/// Observed order from the last residual triple that stays above round-off.
pub fn convergence_order(history: &[f64]) -> Option<f64> {
    let usable: Vec<f64> = history.iter().copied().filter(|r| *r > 1e-13).collect();
    if usable.len() < 3 {
        return None;
    }
    let k = usable.len() - 1;
    let (r0, r1, r2) = (usable[k - 2], usable[k - 1], usable[k]);
    let denom = (r1 / r0).ln();
    if denom.abs() < 1e-12 {
        return None;
    }
    Some((r2 / r1).ln() / denom)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Traces {
    pub l: f64,
    pub m: f64,
    pub i: f64,
    pub j: f64,
}

pub fn functional_traces(model: &TransverseModel, u: &BasicFunction) -> Result<Traces> {
    let zero = model.zero();
    let l = linear_l(model, &zero, u);
    let path = FunctionalPath::linear(&zero, u).with_tolerance(TRACE_TOLERANCE);
    let m = functional_m(model, &path)?;
    let i = functional_i(model, &zero, u)?;
    let mean: f64 =
        model.lifted_measure(model.background_density()).iter().zip(u.values()).map(|(w, v)| w * v).sum::<f64>()
            / model.volume();
    Ok(Traces { l, m, i, j: -l + mean })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilyNode {
    pub t: f64,
    pub coeffs: Vec<f64>,
    pub newton_iterations: usize,
    pub substeps: usize,
    pub residual_norm: f64,
    pub residual_history: Vec<f64>,
    pub convergence_order: Option<f64>,
    pub min_singular_value: Option<f64>,
    pub min_ratio: f64,
    pub traces: Traces,
}

/// Converged states of one continuity run, in the order visited.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityFamily {
    pub equation: Equation,
    pub target: f64,
    pub reached_target: bool,
    pub stop_reason: Option<String>,
    pub nodes: Vec<FamilyNode>,
    #[serde(skip)]
    pub states: Vec<MetricState>,
}

impl ContinuityFamily {
    pub fn t_values(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.t).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the node at `t` (to 1e-12).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|n| (n.t - t).abs() < 1e-12)
    }

    pub fn state_at(&self, t: f64) -> Option<&MetricState> {
        self.index_of(t).map(|i| &self.states[i])
    }

    pub fn last_state(&self) -> Option<&MetricState> {
        self.states.last()
    }

    /// Rebuilds cached states after deserialization.
    pub fn restore_states(&mut self, model: &Arc<TransverseModel>) -> Result<()> {
        self.states = self
            .nodes
            .iter()
            .map(|n| metric_state(model, model.function_from_coeffs(n.coeffs.clone())?))
            .collect::<Result<_>>()?;
        Ok(())
    }
}

/// `u + L(0,u)/t`: an `(s2)` solution mapped to the `(s1)` solution at the same `t > 0`.
pub fn s2_to_s1(model: &TransverseModel, u: &BasicFunction, t: f64) -> BasicFunction {
    u.shifted(linear_l(model, &model.zero(), u) / t)
}

/// Inverse of [`s2_to_s1`]: `v - L(0,v)/(t+1)`.
pub fn s1_to_s2(model: &TransverseModel, v: &BasicFunction, t: f64) -> BasicFunction {
    v.shifted(-linear_l(model, &model.zero(), v) / (t + 1.0))
}

fn make_node(
    model: &TransverseModel,
    t: f64,
    out: &NewtonOutcome,
    eqn: Equation,
    substeps: usize,
    opts: &SolverOptions,
) -> Result<(FamilyNode, MetricState)> {
    let state = out.state.clone();
    let min_singular_value =
        if opts.record_singular_values { Some(operator_min_singular_value(&state, t, eqn)?) } else { None };
    let traces = functional_traces(model, state.potential())?;
    Ok((
        FamilyNode {
            t,
            coeffs: state.potential().coeffs().to_vec(),
            newton_iterations: out.iterations,
            substeps,
            residual_norm: *out.residual_history.last().expect("history is nonempty"),
            residual_history: out.residual_history.clone(),
            convergence_order: convergence_order(&out.residual_history),
            min_singular_value,
            min_ratio: state.min_ratio(),
            traces,
        },
        state,
    ))
}

/// Walks the `(s2)` family from a solved `(t0, u0)` through `targets`
/// (monotone in either direction), storing one node per target.
fn walk_s2(
    model: &Arc<TransverseModel>,
    start: (f64, BasicFunction),
    targets: &[f64],
    opts: &SolverOptions,
    rng: &mut Option<ChaCha8Rng>,
    family: &mut ContinuityFamily,
) {
    let (mut t, mut u) = start;
    let mut prev: Option<(f64, BasicFunction)> = None;
    let mut h = opts.initial_step;
    for &target in targets {
        let dir = if target >= t { 1.0 } else { -1.0 };
        let mut substeps = 0;
        let mut last: Option<NewtonOutcome> = None;
        while (target - t).abs() > 1e-14 {
            let step = h.min((target - t).abs());
            let t_new = if step >= (target - t).abs() { target } else { t + dir * step };
            let mut guess = match &prev {
                Some((tp, up)) if (t - tp).abs() > 1e-14 => {
                    u.add_scaled((t_new - t) / (t - tp), &u.add_scaled(-1.0, up))
                }
                _ => u.clone(),
            };
            if t_new == target {
                if let Some(r) = rng.as_mut() {
                    guess = guess.add_scaled(1.0, &random_perturbation(model, r, opts.seed_amplitude));
                }
            }
            match newton_solve(model, t_new, Equation::S2, guess, opts) {
                Ok(out) => {
                    substeps += 1;
                    prev = Some((t, u));
                    t = t_new;
                    u = out.state.potential().clone();
                    if out.iterations <= opts.fast_iterations {
                        h = (h * opts.grow).min(opts.max_step);
                    }
                    last = Some(out);
                }
                Err(e) => {
                    h *= opts.shrink;
                    if h < opts.min_step {
                        family.stop_reason = Some(e.to_string());
                        return;
                    }
                }
            }
        }
        let out = match last {
            Some(o) => o,
            None => match newton_solve(model, t, Equation::S2, u.clone(), opts) {
                Ok(o) => o,
                Err(e) => {
                    family.stop_reason = Some(e.to_string());
                    return;
                }
            },
        };
        match make_node(model, t, &out, Equation::S2, substeps, opts) {
            Ok((node, state)) => {
                family.nodes.push(node);
                family.states.push(state);
            }
            Err(e) => {
                family.stop_reason = Some(e.to_string());
                return;
            }
        }
    }
}

fn finish(
    model: &Arc<TransverseModel>,
    eqn: Equation,
    mut family: ContinuityFamily,
    opts: &SolverOptions,
) -> Result<ContinuityFamily> {
    if eqn == Equation::S1 {
        family.equation = Equation::S1;
        for (node, state) in family.nodes.iter_mut().zip(family.states.iter_mut()) {
            if node.t > 0.0 {
                let v = s2_to_s1(model, state.potential(), node.t);
                *state = metric_state(model, v)?;
                node.coeffs = state.potential().coeffs().to_vec();
                node.residual_norm = residual(state, node.t, Equation::S1)?.max_abs();
                node.traces = functional_traces(model, state.potential())?;
                if opts.record_singular_values {
                    node.min_singular_value = Some(operator_min_singular_value(state, node.t, Equation::S1)?);
                }
            }
        }
    }
    Ok(family)
}

/// Solves `(s2)` at `t = 0` from `u = 0` and continues to `t_final`; `(s1)`
/// nodes are produced from the `(s2)` solutions by the shift correspondence.
/// Failure after the first node stops the run and is recorded in
/// `stop_reason`.
pub fn continuity_solve(model: &Arc<TransverseModel>, eqn: Equation, opts: &SolverOptions) -> Result<ContinuityFamily> {
    opts.validate()?;
    let mut rng = opts.seed.map(seeded_rng);
    let mut guess = model.zero();
    if let Some(r) = rng.as_mut() {
        guess = guess.add_scaled(1.0, &random_perturbation(model, r, opts.seed_amplitude));
    }
    let out0 = newton_solve(model, 0.0, Equation::S2, guess, opts)?;
    let (node, state) = make_node(model, 0.0, &out0, Equation::S2, 0, opts)?;
    let mut family = ContinuityFamily {
        equation: Equation::S2,
        target: opts.t_final,
        reached_target: false,
        stop_reason: None,
        nodes: vec![node],
        states: vec![state],
    };
    let mut targets: Vec<f64> =
        opts.t_nodes.iter().copied().filter(|t| *t > 0.0 && *t <= opts.t_final + 1e-14).collect();
    targets.sort_by(f64::total_cmp);
    targets.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    if targets.last().is_none_or(|t| (t - opts.t_final).abs() > 1e-14) {
        targets.push(opts.t_final);
    }
    walk_s2(model, (0.0, out0.state.potential().clone()), &targets, opts, &mut rng, &mut family);
    family.reached_target = family.nodes.last().is_some_and(|n| (n.t - opts.t_final).abs() < 1e-14);
    finish(model, eqn, family, opts)
}

/// Continues a solved `(s2)` state at `t0` through `targets` (e.g. backward to 0).
pub fn extend_family(
    model: &Arc<TransverseModel>,
    t0: f64,
    u0: &BasicFunction,
    targets: &[f64],
    opts: &SolverOptions,
) -> Result<ContinuityFamily> {
    let out = newton_solve(model, t0, Equation::S2, u0.clone(), opts)?;
    let (node, state) = make_node(model, t0, &out, Equation::S2, 0, opts)?;
    let mut family = ContinuityFamily {
        equation: Equation::S2,
        target: *targets.last().unwrap_or(&t0),
        reached_target: false,
        stop_reason: None,
        nodes: vec![node],
        states: vec![state],
    };
    walk_s2(model, (t0, out.state.potential().clone()), targets, opts, &mut None, &mut family);
    family.reached_target = family.nodes.len() == targets.len() + 1;
    Ok(family)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchSummary {
    pub seed: u64,
    pub initial_step: f64,
    pub reached_t: f64,
    pub nodes: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairDistance {
    pub a: usize,
    pub b: usize,
    /// `max_t ‖u_t - u′_t‖_∞` over common nodes.
    pub max_over_t: f64,
    pub at_final: f64,
    pub common_nodes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackwardCheck {
    pub tau: f64,
    pub reached_zero: bool,
    /// `‖u_0^{backward} - u_0^{forward}‖_∞`.
    pub endpoint_distance: f64,
    pub l_at_zero: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub equation: Equation,
    pub branches: Vec<BranchSummary>,
    pub pairwise: Vec<PairDistance>,
    pub max_pairwise: f64,
    pub backward: Option<BackwardCheck>,
}

pub const BACKWARD_TAU: f64 = 0.7;

/// Runs one continuation per seed with distinct initializations and step
/// schedules, compares the branches, and runs the backward extension from
/// `τ = 0.7` on the first branch.
pub fn uniqueness_experiment(
    model: &Arc<TransverseModel>,
    eqn: Equation,
    seeds: &[u64],
    opts: &SolverOptions,
) -> Result<UniquenessReport> {
    if !model.even_only() {
        return Err(Error::InvalidParameter("uniqueness experiments require the even subspace".into()));
    }
    let mut branches = Vec::new();
    let mut families = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        let mut o = opts.clone();
        o.seed = Some(seed);
        o.initial_step = (opts.initial_step * (1.0 + 0.37 * i as f64)).min(o.max_step).max(o.min_step);
        o.grow = opts.grow + 0.25 * i as f64;
        o.record_singular_values = false;
        match continuity_solve(model, eqn, &o) {
            Ok(f) => {
                branches.push(BranchSummary {
                    seed,
                    initial_step: o.initial_step,
                    reached_t: f.nodes.last().map_or(0.0, |n| n.t),
                    nodes: f.len(),
                    error: f.stop_reason.clone(),
                });
                families.push(Some(f));
            }
            Err(e) => {
                branches.push(BranchSummary {
                    seed,
                    initial_step: o.initial_step,
                    reached_t: f64::NAN,
                    nodes: 0,
                    error: Some(e.to_string()),
                });
                families.push(None);
            }
        }
    }
    let mut pairwise = Vec::new();
    for a in 0..families.len() {
        for b in (a + 1)..families.len() {
            if let (Some(fa), Some(fb)) = (&families[a], &families[b]) {
                let mut max_over_t: f64 = 0.0;
                let mut at_final = f64::NAN;
                let mut common = 0;
                for (i, n) in fa.nodes.iter().enumerate() {
                    if let Some(sb) = fb.state_at(n.t) {
                        let d = fa.states[i].potential().max_abs_diff(sb.potential());
                        max_over_t = max_over_t.max(d);
                        at_final = d;
                        common += 1;
                    }
                }
                pairwise.push(PairDistance { a, b, max_over_t, at_final, common_nodes: common });
            }
        }
    }
    let max_pairwise = pairwise.iter().fold(0.0f64, |m, p| m.max(p.max_over_t));
    let backward = families.first().and_then(|f| f.as_ref()).and_then(|f| {
        let tau = BACKWARD_TAU;
        let i = f.index_of(tau)?;
        let u_tau = match eqn {
            Equation::S2 => f.states[i].potential().clone(),
            Equation::S1 => s1_to_s2(model, f.states[i].potential(), tau),
        };
        let u_zero = f.states[0].potential().clone();
        let targets: Vec<f64> = (0..7).rev().map(|k| k as f64 / 10.0).collect();
        let mut o = opts.clone();
        o.record_singular_values = false;
        Some(match extend_family(model, tau, &u_tau, &targets, &o) {
            Ok(back) => {
                let reached_zero = back.nodes.last().is_some_and(|n| n.t.abs() < 1e-14);
                let end = back.states.last().expect("start node present").potential();
                BackwardCheck {
                    tau,
                    reached_zero,
                    endpoint_distance: if reached_zero { end.max_abs_diff(&u_zero) } else { f64::NAN },
                    l_at_zero: linear_l(model, &model.zero(), end),
                    error: back.stop_reason,
                }
            }
            Err(e) => BackwardCheck {
                tau,
                reached_zero: false,
                endpoint_distance: f64::NAN,
                l_at_zero: f64::NAN,
                error: Some(e.to_string()),
            },
        })
    });
    Ok(UniquenessReport { equation: eqn, branches, pairwise, max_pairwise, backward })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig, SymmetryMode};

    fn canonical(n: usize, mode: SymmetryMode) -> Arc<TransverseModel> {
        build_model(ModelConfig::canonical(n, mode)).unwrap()
    }

    fn perturbed(n: usize) -> Arc<TransverseModel> {
        build_model(ModelConfig::canonical(n, SymmetryMode::Even).with_perturbation(2, 0, 0.05)).unwrap()
    }

    #[test]
    fn canonical_residual_vanishes() {
        let model = canonical(12, SymmetryMode::Full);
        let st = metric_state(&model, model.zero()).unwrap();
        for t in [0.0, 0.3, 1.0] {
            for eqn in [Equation::S1, Equation::S2] {
                assert!(residual(&st, t, eqn).unwrap().max_abs() < 1e-14);
            }
        }
    }

    #[test]
    fn perturbed_residual_at_zero_is_minus_h() {
        let model = perturbed(16);
        let st = metric_state(&model, model.zero()).unwrap();
        let r = residual(&st, 0.0, Equation::S2).unwrap();
        let h = model.project(model.ricci_potential().values());
        assert!(r.max_abs_diff(&h.scaled(-1.0)) < 1e-12);
    }

    #[test]
    fn linearized_solve_on_harmonic() {
        let model = canonical(12, SymmetryMode::Full);
        let st = metric_state(&model, model.zero()).unwrap();
        let rhs = model.harmonic(2, 0, 1.0).unwrap();
        let s = linearized_solve(&st, 0.0, Equation::S2, &rhs, false, 1e-3).unwrap();
        assert!(s.delta.max_abs_diff(&rhs.scaled(-1.0 / 12.0)) < 1e-12);
        let c = linearized_solve(&st, 0.0, Equation::S2, &model.constant(2.0), false, 1e-3).unwrap();
        assert!(c.delta.max_abs_diff(&model.constant(0.5)) < 1e-12);
    }

    #[test]
    fn singular_operator_requires_projection() {
        let model = canonical(12, SymmetryMode::Full);
        let st = metric_state(&model, model.zero()).unwrap();
        let rhs = model.harmonic(2, 1, 1.0).unwrap();
        assert!(matches!(
            linearized_solve(&st, 1.0, Equation::S1, &rhs, false, 1e-3),
            Err(Error::SingularOperator { .. })
        ));
        let p = linearized_solve(&st, 1.0, Equation::S1, &rhs, true, 1e-3).unwrap();
        assert_eq!(p.projected_modes, 3);
        // -□δ + 4δ = Y₂₁  =>  δ = -Y₂₁/8
        assert!(p.delta.max_abs_diff(&rhs.scaled(-1.0 / 8.0)) < 1e-10);
    }

    #[test]
    fn jacobian_matches_grid_linearization() {
        let model = perturbed(12);
        let u = model.harmonic(4, 2, 0.003).unwrap();
        let st = metric_state(&model, u).unwrap();
        let d = model.harmonic(2, -1, 0.5).unwrap().add_scaled(1.0, &model.harmonic(6, 3, 0.2).unwrap()).shifted(0.3);
        for eqn in [Equation::S1, Equation::S2] {
            let j = jacobian_matrix(&st, 0.4, eqn).unwrap();
            let jd = &j * DVector::from_column_slice(d.coeffs());
            let lin = linearization(&st, 0.4, eqn, &d).unwrap();
            let diff = jd.iter().zip(lin.coeffs()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(diff < 1e-11, "{eqn:?}: {diff}");
        }
    }

    #[test]
    fn shift_correspondence_round_trips() {
        let model = perturbed(12);
        let u = model.harmonic(2, 0, 0.01).unwrap().shifted(0.2);
        let v = s2_to_s1(&model, &u, 0.4);
        assert!(s1_to_s2(&model, &v, 0.4).max_abs_diff(&u) < 1e-14);
    }

    #[test]
    fn canonical_family_needs_no_corrections() {
        let model = canonical(12, SymmetryMode::Even);
        let fam = continuity_solve(&model, Equation::S2, &SolverOptions::default()).unwrap();
        assert!(fam.reached_target);
        assert!(fam.nodes.iter().all(|n| n.newton_iterations == 0 && n.residual_norm < 1e-14));
        assert!(fam.states.iter().all(|s| s.potential().max_abs() == 0.0));
    }

    #[test]
    fn perturbed_family_reaches_one() {
        let model = perturbed(12);
        let fam = continuity_solve(&model, Equation::S2, &SolverOptions::default()).unwrap();
        assert!(fam.reached_target, "{:?}", fam.stop_reason);
        assert!(fam.nodes[0].traces.l.abs() < 1e-12);
        let last = fam.last_state().unwrap();
        let s = last.scalar_curvature_values().unwrap();
        let dev = s.iter().fold(0.0f64, |a, v| a.max((v - 4.0).abs()));
        assert!(dev < 1e-6, "{dev}");
        // the limit metric is the canonical one: u₁ + ψ is constant
        let w = last.potential().add_scaled(1.0, model.background_potential());
        assert!(w.oscillation() < 1e-8);
    }

    #[test]
    fn s1_family_solves_s1() {
        let model = perturbed(12);
        let fam = continuity_solve(&model, Equation::S1, &SolverOptions::default()).unwrap();
        for (n, st) in fam.nodes.iter().zip(&fam.states).skip(1) {
            let r = residual(st, n.t, Equation::S1).unwrap().max_abs();
            assert!(r < 1e-9, "t = {}: {r}", n.t);
        }
    }

    #[test]
    fn convergence_order_of_quadratic_sequence() {
        let p = convergence_order(&[1e-2, 1e-4, 1e-8]).unwrap();
        assert!((p - 2.0).abs() < 1e-12);
        assert!(convergence_order(&[0.0]).is_none());
    }
}
