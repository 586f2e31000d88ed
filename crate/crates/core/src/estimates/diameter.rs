//! Diameter of `(S^3, g_{u,μ})` by shortest paths on a k-nearest-neighbour
//! graph over sampled points of the total space.
//!
//! The total space is the unit sphere in `C^2` with Reeb field `ξ = i p`,
//! and `g_{u,μ} = μ^{-1} ρ_u |v_H|² + μ^{-2} η_u(v)²` with
//! `η_u = η + 2 d^c u`, since `dη = 2 dη₀` on the unit sphere.

use crate::model::MetricState;
use crate::sampling::seeded_rng;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiameterOptions {
    pub samples: usize,
    pub neighbors: usize,
    /// Random sources in addition to the double-sweep sources.
    pub sources: usize,
    pub seed: u64,
}

impl Default for DiameterOptions {
    fn default() -> Self {
        Self { samples: 3000, neighbors: 20, sources: 8, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiameterEstimate {
    pub value: f64,
    pub method: String,
    pub samples: usize,
    pub neighbors: usize,
    /// Median edge length, a proxy for the graph resolution.
    pub median_edge: f64,
    /// `false` if the graph was disconnected.
    pub connected: bool,
}

type P4 = [f64; 4];

fn dot(a: &P4, b: &P4) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multiplication by `i` on `C^2 = R^4` with `(x1, y1, x2, y2)` coordinates.
fn times_i(p: &P4) -> P4 {
    [-p[1], p[0], -p[3], p[2]]
}

fn normalize(p: P4) -> P4 {
    let n = dot(&p, &p).sqrt();
    [p[0] / n, p[1] / n, p[2] / n, p[3] / n]
}

/// Hopf projection to `(θ, φ)` on the quotient sphere.
fn hopf(p: &P4) -> (f64, f64) {
    let a = p[0] * p[0] + p[1] * p[1];
    let b = p[2] * p[2] + p[3] * p[3];
    let theta = (a - b).clamp(-1.0, 1.0).acos();
    // arg(z1 * conj(z2))
    let re = p[0] * p[2] + p[1] * p[3];
    let im = p[1] * p[2] - p[0] * p[3];
    (theta, im.atan2(re))
}

/// Logarithm map of the round sphere: tangent vector at `p` pointing to `q`.
fn log_map(p: &P4, q: &P4) -> P4 {
    let c = dot(p, q).clamp(-1.0, 1.0);
    let angle = c.acos();
    let w = [q[0] - c * p[0], q[1] - c * p[1], q[2] - c * p[2], q[3] - c * p[3]];
    let nw = dot(&w, &w).sqrt();
    if nw < 1e-15 {
        return [0.0; 4];
    }
    let s = angle / nw;
    [w[0] * s, w[1] * s, w[2] * s, w[3] * s]
}

struct PointData {
    p: P4,
    h1: P4,
    h2: P4,
    rho: f64,
    /// `d(u∘π)(h1)`, `d(u∘π)(h2)`.
    du: (f64, f64),
}

fn point_data(state: &MetricState, density_coeffs: &[f64], p: P4) -> PointData {
    let grid = state.model().grid();
    let u = state.potential().coeffs();
    // horizontal orthonormal frame: (-conj z2, conj z1) and i times it
    let h1 = [-p[2], p[3], p[0], -p[1]];
    let h2 = times_i(&h1);
    let (theta, phi) = hopf(&p);
    let rho = grid.eval_point(density_coeffs, theta, phi);
    let eps = 1e-5;
    let deriv = |h: &P4| {
        let at = |s: f64| {
            let q = normalize([p[0] + s * h[0], p[1] + s * h[1], p[2] + s * h[2], p[3] + s * h[3]]);
            let (t, f) = hopf(&q);
            grid.eval_point(u, t, f)
        };
        (at(eps) - at(-eps)) / (2.0 * eps)
    };
    let du = (deriv(&h1), deriv(&h2));
    PointData { p, h1, h2, rho, du }
}

fn edge_length_from(a: &PointData, v: &P4, mu: f64) -> f64 {
    let ip = times_i(&a.p);
    let vert = dot(v, &ip);
    let vh = [v[0] - vert * ip[0], v[1] - vert * ip[1], v[2] - vert * ip[2], v[3] - vert * ip[3]];
    let jvh = times_i(&vh);
    let du = dot(&jvh, &a.h1) * a.du.0 + dot(&jvh, &a.h2) * a.du.1;
    let eta_u = vert - du;
    (a.rho * dot(&vh, &vh) / mu + eta_u * eta_u / (mu * mu)).sqrt()
}

/// Estimates `diam(S, g_{u,μ})`.
pub fn estimate_diameter(state: &MetricState, mu: f64, opts: &DiameterOptions) -> DiameterEstimate {
    let mut rng = seeded_rng(opts.seed);
    let density_coeffs = state.model().grid().analyze(state.density());
    let n = opts.samples.max(8);
    let k = opts.neighbors.min(n - 1).max(1);
    let pts: Vec<PointData> = (0..n)
        .map(|_| {
            let p = normalize([
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ]);
            point_data(state, &density_coeffs, p)
        })
        .collect();
    let mut graph: UnGraph<(), f64> = UnGraph::with_capacity(n, n * k);
    let idx: Vec<NodeIndex> = (0..n).map(|_| graph.add_node(())).collect();
    let mut lengths = Vec::with_capacity(n * k);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        for j in 0..n {
            if j != i {
                cand.push((-dot(&pts[i].p, &pts[j].p), j));
            }
        }
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        for &(_, j) in &cand[..k] {
            if graph.find_edge(idx[i], idx[j]).is_some() {
                continue;
            }
            let vij = log_map(&pts[i].p, &pts[j].p);
            let vji = log_map(&pts[j].p, &pts[i].p);
            let len = 0.5 * (edge_length_from(&pts[i], &vij, mu) + edge_length_from(&pts[j], &vji, mu));
            graph.add_edge(idx[i], idx[j], len);
            lengths.push(len);
        }
    }
    lengths.sort_by(f64::total_cmp);
    let median_edge = lengths.get(lengths.len() / 2).copied().unwrap_or(0.0);

    let mut best = 0.0f64;
    let mut connected = true;
    let mut eccentricity = |s: usize| -> usize {
        let d = dijkstra(&graph, idx[s], None, |e| *e.weight());
        if d.len() < n {
            connected = false;
        }
        let (far, dist) =
            d.iter()
                .map(|(node, dist)| (node.index(), *dist))
                .fold((s, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        best = best.max(dist);
        far
    };
    let mut sources: Vec<usize> = (0..opts.sources).map(|_| rng.random_range(0..n)).collect();
    sources.push(0);
    for s in sources {
        // double sweep: the farthest point of the farthest point
        let a = eccentricity(s);
        let b = eccentricity(a);
        eccentricity(b);
    }
    DiameterEstimate { value: best, method: "knn-graph".into(), samples: n, neighbors: k, median_edge, connected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, metric_state, ModelConfig, SymmetryMode};
    use std::f64::consts::PI;

    #[test]
    fn hopf_projection_is_fiber_invariant() {
        let p = normalize([0.3, -0.2, 0.7, 0.4]);
        let (t0, f0) = hopf(&p);
        let a = 0.9f64;
        // e^{ia} p
        let q = [
            a.cos() * p[0] - a.sin() * p[1],
            a.sin() * p[0] + a.cos() * p[1],
            a.cos() * p[2] - a.sin() * p[3],
            a.sin() * p[2] + a.cos() * p[3],
        ];
        let (t1, f1) = hopf(&q);
        assert!((t0 - t1).abs() < 1e-14 && (f0 - f1).abs() < 1e-14);
    }

    #[test]
    fn canonical_diameter_is_pi() {
        let model = build_model(ModelConfig::canonical(8, SymmetryMode::Full)).unwrap();
        let st = metric_state(&model, model.zero()).unwrap();
        let d = estimate_diameter(&st, 1.0, &DiameterOptions::default());
        assert!(d.connected);
        assert!((d.value - PI).abs() < 0.05 * PI, "{}", d.value);
    }
}
