//! Quantitative checks of the a priori estimate chain along a continuity family.

mod diameter;
mod green;

pub use diameter::{estimate_diameter, DiameterEstimate, DiameterOptions};
pub use green::{green_lower_bound, GreenBound, GreenKernel};

use crate::error::{Error, Result};
use crate::functionals::linear_l;
use crate::ma_solver::{residual, s1_to_s2, ContinuityFamily, Equation};
use crate::model::{metric_state, sasaki_ricci_bound, MetricState};
use serde::{Deserialize, Serialize};

/// A state must solve `(s1)` or `(s2)` to this max-norm residual before the
/// rescaled-metric bound is assembled.
pub const SOLUTION_TOLERANCE: f64 = 1e-8;
pub const MONOTONE_TOLERANCE: f64 = 1e-8;
pub const MIN_FAMILY_NODES: usize = 5;

fn factorial(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// The Sasakian structure `η_{u,μ} = μ^{-1} η_u`, `ξ_μ = μ ξ` with `μ = 1/t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RescaledMetric {
    pub t: f64,
    pub mu: f64,
    /// `∫ η_{u,μ} ∧ (dη_{u,μ})^m` by quadrature.
    pub volume: f64,
    pub base_volume: f64,
    /// `t^{m+1} V`.
    pub expected_volume: f64,
    pub volume_relative_error: f64,
    /// Minimum of the transverse Ricci eigenvalue relative to `g^T_u`.
    pub transverse_ricci_min: f64,
    pub sasaki_ricci_bound: f64,
    pub diameter: Option<DiameterEstimate>,
}

fn solution_residual(state: &MetricState, t: f64) -> Result<f64> {
    let r1 = residual(state, t, Equation::S1)?.max_abs();
    let r2 = residual(state, t, Equation::S2)?.max_abs();
    Ok(r1.min(r2))
}

/// Rescaled-family quantities; `diameter` runs the graph estimator when given.
pub fn rescaled_family_check(
    state: &MetricState,
    t: f64,
    diameter: Option<&DiameterOptions>,
) -> Result<RescaledMetric> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidParameter(format!("t must lie in (0, 1], got {t}")));
    }
    let res = solution_residual(state, t)?;
    if res > SOLUTION_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "state does not solve (s1) or (s2) at t = {t}: residual {res:.3e}"
        )));
    }
    let model = state.model();
    let m = model.m() as f64;
    let mu = 1.0 / t;
    let scale = mu.powf(-(m + 1.0));
    let volume: f64 = state.measure().iter().map(|w| w * scale).sum();
    let base_volume = state.volume();
    let expected_volume = t.powf(m + 1.0) * model.volume();
    let s = state.scalar_curvature_values()?;
    let transverse_ricci_min = s.iter().copied().fold(f64::INFINITY, f64::min) / m;
    let bound = sasaki_ricci_bound(state, t)?;
    Ok(RescaledMetric {
        t,
        mu,
        volume,
        base_volume,
        expected_volume,
        volume_relative_error: (volume - expected_volume).abs() / expected_volume,
        transverse_ricci_min,
        sasaki_ricci_bound: bound,
        diameter: diameter.map(|o| estimate_diameter(state, mu, o)),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub t: f64,
    pub osc: f64,
    pub sup_abs: f64,
    pub i: f64,
    pub j: f64,
    pub l: f64,
    pub m: f64,
    /// Three-point derivative of `M(0, u_t)`; absent at the end nodes.
    pub dm_dt: Option<f64>,
    pub d_gap_dt: Option<f64>,
    /// `-(2m+2)(1-t) d/dt (I - J)`.
    pub dm_dt_predicted: Option<f64>,
    pub dm_dt_error: Option<f64>,
    pub monotone: bool,
    /// `2m(KV/m! + C/t) - (osc - I)` with the fitted `C`; absent at `t = 0`.
    pub oscillation_slack: Option<f64>,
    pub t_osc: f64,
    /// Node where `|-t(2m+2)u - (2m+2)L + h|` is smallest.
    pub x_t: usize,
    pub combination_at_x_t: f64,
    pub combination_changes_sign: bool,
    pub u_at_x_t: f64,
    pub l_minus_u_at_x_t: f64,
    pub l_gap_within_osc: bool,
    pub rescaled: Option<RescaledMetric>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    pub equation: Equation,
    pub green_k: f64,
    pub volume: f64,
    /// `max_{t>0} t (osc - I - 2m KV/m!) / (2m)`, reported as computed.
    pub fitted_c: f64,
    /// Whether the oscillation inequality already holds with `C = 0`.
    pub holds_without_c: bool,
    /// `max_t t·osc u_t`.
    pub t_osc_max: f64,
    pub records: Vec<EstimateRecord>,
    pub monotone_pass: bool,
    pub oscillation_pass: bool,
    pub x_t_pass: bool,
    pub l_gap_pass: bool,
    pub rescaled_pass: bool,
    pub max_dm_dt: f64,
    pub max_dm_dt_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct EstimateOptions {
    /// Run the diameter estimator at the last node.
    pub diameter: Option<DiameterOptions>,
}

/// Three-point first derivative on a nonuniform grid at interior index `i`.
fn derivative(ts: &[f64], f: &[f64], i: usize) -> f64 {
    let h1 = ts[i] - ts[i - 1];
    let h2 = ts[i + 1] - ts[i];
    -h2 / (h1 * (h1 + h2)) * f[i - 1] + (h2 - h1) / (h1 * h2) * f[i] + h1 / (h2 * (h1 + h2)) * f[i + 1]
}

/// Per-node estimate records for a family (converted to the `(s2)` gauge).
pub fn apriori_report(family: &ContinuityFamily, options: &EstimateOptions) -> Result<EstimateReport> {
    if family.states.len() < MIN_FAMILY_NODES || family.states.len() != family.nodes.len() {
        return Err(Error::FamilyTooSparse { nodes: family.states.len(), required: MIN_FAMILY_NODES });
    }
    let model = family.states[0].model().clone();
    let mut order: Vec<usize> = (0..family.nodes.len()).collect();
    order.sort_by(|&a, &b| family.nodes[a].t.total_cmp(&family.nodes[b].t));
    let ts: Vec<f64> = order.iter().map(|&i| family.nodes[i].t).collect();
    let states: Vec<MetricState> = order
        .iter()
        .map(|&i| {
            let st = &family.states[i];
            match family.equation {
                Equation::S2 => Ok(st.clone()),
                Equation::S1 => metric_state(&model, s1_to_s2(&model, st.potential(), family.nodes[i].t)),
            }
        })
        .collect::<Result<_>>()?;
    let traces: Vec<_> = order.iter().map(|&i| family.nodes[i].traces).collect();

    let background = metric_state(&model, model.zero())?;
    let green = green_lower_bound(&background)?;
    let k = green.k;
    let v = model.volume();
    let m = model.m() as f64;
    let c_einstein = model.einstein_constant();
    let kv_term = 2.0 * m * k * v / factorial(model.m());

    let osc: Vec<f64> = states.iter().map(|s| s.potential().oscillation()).collect();
    let fitted_c = ts
        .iter()
        .zip(&osc)
        .zip(&traces)
        .filter(|((t, _), _)| **t > 0.0)
        .map(|((t, o), tr)| t * (o - tr.i - kv_term) / (2.0 * m))
        .fold(f64::NEG_INFINITY, f64::max);

    let ms: Vec<f64> = traces.iter().map(|t| t.m).collect();
    let gaps: Vec<f64> = traces.iter().map(|t| t.i - t.j).collect();
    let h = model.ricci_potential();
    let mut records = Vec::with_capacity(ts.len());
    for (idx, st) in states.iter().enumerate() {
        let t = ts[idx];
        let tr = traces[idx];
        let u = st.potential();
        let interior = idx > 0 && idx + 1 < ts.len();
        let (dm_dt, d_gap_dt) =
            if interior { (Some(derivative(&ts, &ms, idx)), Some(derivative(&ts, &gaps, idx))) } else { (None, None) };
        let dm_dt_predicted = d_gap_dt.map(|g| -c_einstein * (1.0 - t) * g);
        let dm_dt_error = dm_dt.zip(dm_dt_predicted).map(|(a, b)| (a - b).abs());
        let l = linear_l(&model, &model.zero(), u);
        let combo: Vec<f64> =
            u.values().iter().zip(h.values()).map(|(u, h)| -t * c_einstein * u - c_einstein * l + h).collect();
        let (x_t, combination_at_x_t) = combo.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, v)| {
            if v.abs() < acc.1.abs() {
                (i, v)
            } else {
                acc
            }
        });
        let cmin = combo.iter().copied().fold(f64::INFINITY, f64::min);
        let cmax = combo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12;
        let combination_changes_sign = cmin <= tol && cmax >= -tol;
        let u_at_x_t = u.values()[x_t];
        let l_minus_u_at_x_t = (l - u_at_x_t).abs();
        let oscillation_slack = (t > 0.0).then(|| kv_term + 2.0 * m * fitted_c / t - (osc[idx] - tr.i));
        let rescaled = if t > 0.0 {
            let diam = if idx + 1 == ts.len() { options.diameter.as_ref() } else { None };
            Some(rescaled_family_check(st, t, diam)?)
        } else {
            None
        };
        records.push(EstimateRecord {
            t,
            osc: osc[idx],
            sup_abs: u.max_abs(),
            i: tr.i,
            j: tr.j,
            l,
            m: tr.m,
            dm_dt,
            d_gap_dt,
            dm_dt_predicted,
            dm_dt_error,
            monotone: dm_dt.is_none_or(|d| d <= MONOTONE_TOLERANCE),
            oscillation_slack,
            t_osc: t * osc[idx],
            x_t,
            combination_at_x_t,
            combination_changes_sign,
            u_at_x_t,
            l_minus_u_at_x_t,
            l_gap_within_osc: l_minus_u_at_x_t <= osc[idx] + 1e-9,
            rescaled,
        });
    }
    let t_osc_max = records.iter().fold(0.0f64, |a, r| a.max(r.t_osc));
    let max_dm_dt = records.iter().filter_map(|r| r.dm_dt).fold(f64::NEG_INFINITY, f64::max);
    let max_dm_dt_error = records.iter().filter_map(|r| r.dm_dt_error).fold(0.0, f64::max);
    let rescaled_pass = records.iter().filter_map(|r| r.rescaled.as_ref()).all(|r| {
        r.volume_relative_error < 1e-10
            && r.sasaki_ricci_bound >= 2.0 * m - 1e-6
            && r.diameter.as_ref().is_none_or(|d| d.value <= std::f64::consts::PI * 1.05)
    });
    Ok(EstimateReport {
        equation: family.equation,
        green_k: k,
        volume: v,
        fitted_c,
        holds_without_c: fitted_c <= 0.0,
        t_osc_max,
        monotone_pass: records.iter().all(|r| r.monotone),
        oscillation_pass: records.iter().filter_map(|r| r.oscillation_slack).all(|s| s >= -1e-12),
        x_t_pass: records.iter().all(|r| r.combination_changes_sign),
        l_gap_pass: records.iter().all(|r| r.l_gap_within_osc),
        rescaled_pass,
        max_dm_dt,
        max_dm_dt_error,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ma_solver::{continuity_solve, SolverOptions};
    use crate::model::{build_model, ModelConfig, SymmetryMode};
    use std::f64::consts::PI;

    #[test]
    fn canonical_rescaled_volume() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Full)).unwrap();
        let st = metric_state(&model, model.zero()).unwrap();
        let r = rescaled_family_check(&st, 0.5, None).unwrap();
        assert!((r.volume - PI * PI / 2.0).abs() < 1e-12);
        assert!(r.sasaki_ricci_bound >= 2.0 - 1e-12);
        assert!(rescaled_family_check(&st, 0.0, None).is_err());
    }

    #[test]
    fn non_solution_is_rejected() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Full)).unwrap();
        let st = metric_state(&model, model.harmonic(2, 0, 0.01).unwrap()).unwrap();
        assert!(rescaled_family_check(&st, 0.5, None).is_err());
    }

    #[test]
    fn canonical_family_report_is_trivial() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Even)).unwrap();
        let fam = continuity_solve(&model, Equation::S2, &SolverOptions::default()).unwrap();
        let rep = apriori_report(&fam, &EstimateOptions::default()).unwrap();
        for r in &rep.records {
            assert!(r.osc.abs() < 1e-14 && r.i.abs() < 1e-14);
            assert!(r.combination_changes_sign);
        }
        assert!(rep.monotone_pass && rep.oscillation_pass && rep.l_gap_pass && rep.rescaled_pass);
    }

    #[test]
    fn sparse_family_is_rejected() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Even)).unwrap();
        let opts = SolverOptions { t_nodes: vec![0.5, 1.0], ..SolverOptions::default() };
        let fam = continuity_solve(&model, Equation::S2, &opts).unwrap();
        assert!(matches!(apriori_report(&fam, &EstimateOptions::default()), Err(Error::FamilyTooSparse { .. })));
    }

    #[test]
    fn perturbed_family_is_monotone() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Even).with_perturbation(2, 0, 0.05)).unwrap();
        let fam = continuity_solve(&model, Equation::S2, &SolverOptions::default()).unwrap();
        let rep = apriori_report(&fam, &EstimateOptions::default()).unwrap();
        assert!(rep.monotone_pass, "{}", rep.max_dm_dt);
        assert!(rep.x_t_pass && rep.l_gap_pass && rep.oscillation_pass && rep.rescaled_pass);
        assert!(rep.max_dm_dt_error < 1e-4);
    }
}
