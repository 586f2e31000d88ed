//! Discrete Green kernel of the basic de Rham Laplacian `Δ = 2□` with the
//! lifted measure.

use crate::error::{Error, Result};
use crate::linalg::generalized_symmetric_eigen;
use crate::model::{BasicFunction, MetricState};
use nalgebra::{DMatrix, DVector};

const ROW_BLOCK: usize = 512;

/// `G(x, y) = Σ_k φ_k(x) φ_k(y) / (2 λ_k)` over the nonconstant eigenpairs of
/// `□_u`, with `φ_k` orthonormal for `(dη_u)^m ∧ η`.
#[derive(Clone, Debug)]
pub struct GreenKernel {
    state: MetricState,
    /// Eigenvector coefficients, one column per nonconstant mode.
    vectors: DMatrix<f64>,
    /// `1 / (2 λ_k)`.
    inverse: Vec<f64>,
    /// Node values scaled by `sqrt(1/(2 λ_k))`, so that `G = Ψ Ψᵀ`.
    psi: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct GreenBound {
    /// `K = max(0, -min G)`.
    pub k: f64,
    pub min_entry: f64,
    pub argmin: (usize, usize),
    /// `max_x |∫ G(x, y) dμ(y)|`.
    pub row_mean_max: f64,
    /// `max |G(x,y) - G(y,x)|` on a sampled block.
    pub asymmetry: f64,
    pub kernel: GreenKernel,
}

impl GreenKernel {
    pub fn new(state: &MetricState) -> Result<Self> {
        let model = state.model();
        let n = model.grid().n_modes();
        let scale = model.fiber_length() / 4.0;
        let stiff =
            DMatrix::from_diagonal(&DVector::from_iterator(n, model.complex_eigenvalues().iter().map(|l| l * scale)));
        let eig = generalized_symmetric_eigen(&stiff, &state.mass_matrix())?;
        if eig.values[0].abs() > 1e-8 || eig.values[1] < 1e-8 {
            return Err(Error::Eigen(format!(
                "expected a simple zero eigenvalue, got {} and {}",
                eig.values[0], eig.values[1]
            )));
        }
        let vectors = eig.vectors.columns(1, n - 1).into_owned();
        let inverse: Vec<f64> = eig.values[1..].iter().map(|l| 0.5 / l).collect();
        let grid = model.grid();
        let nodes = grid.n_nodes();
        let mut psi = DMatrix::zeros(nodes, n - 1);
        for k in 0..n - 1 {
            let col: Vec<f64> = vectors.column(k).iter().copied().collect();
            let vals = grid.synthesize(&col);
            let s = inverse[k].sqrt();
            for (i, v) in vals.iter().enumerate() {
                psi[(i, k)] = v * s;
            }
        }
        Ok(Self { state: state.clone(), vectors, inverse, psi })
    }

    pub fn state(&self) -> &MetricState {
        &self.state
    }

    /// `x ↦ ∫ G(x, y) f(y) dμ(y)`.
    pub fn apply(&self, f: &BasicFunction) -> Result<BasicFunction> {
        let model = self.state.model();
        model.check_function(f)?;
        let mass = self.state.mass_matrix();
        let proj = self.vectors.transpose() * (mass * DVector::from_column_slice(f.coeffs()));
        let weighted = DVector::from_iterator(proj.len(), proj.iter().zip(&self.inverse).map(|(p, w)| p * w));
        let coeffs = &self.vectors * weighted;
        model.function_from_coeffs(coeffs.as_slice().to_vec())
    }

    /// `G(x, ·)` for node `x`.
    pub fn row(&self, x: usize) -> Vec<f64> {
        let r = self.psi.row(x);
        (&self.psi * r.transpose()).as_slice().to_vec()
    }

    /// `max_x |f(x) - mean(f) - ∫ G(x,y) Δf(y) dμ(y)|`.
    pub fn reproduction_error(&self, f: &BasicFunction) -> Result<f64> {
        let lap = self.state.de_rham_laplacian(f)?;
        let g = self.apply(&lap)?;
        let mean = self.state.integrate(f) / self.state.volume();
        Ok(f.values().iter().zip(g.values()).fold(0.0f64, |a, (f, g)| a.max((f - mean - g).abs())))
    }

    pub fn bound(self) -> GreenBound {
        let nodes = self.psi.nrows();
        let measure = DVector::from_column_slice(self.state.measure());
        let row_means = &self.psi * (self.psi.transpose() * measure);
        let row_mean_max = row_means.amax();
        let mut min_entry = f64::INFINITY;
        let mut argmin = (0, 0);
        let mut start = 0;
        while start < nodes {
            let len = ROW_BLOCK.min(nodes - start);
            let block = self.psi.rows(start, len) * self.psi.transpose();
            for c in 0..nodes {
                for r in 0..len {
                    let v = block[(r, c)];
                    if v < min_entry {
                        min_entry = v;
                        argmin = (start + r, c);
                    }
                }
            }
            start += len;
        }
        let b = ROW_BLOCK.min(nodes);
        let sample = self.psi.rows(0, b) * self.psi.rows(0, b).transpose();
        let asymmetry = (&sample - sample.transpose()).amax();
        GreenBound { k: (-min_entry).max(0.0), min_entry, argmin, row_mean_max, asymmetry, kernel: self }
    }
}

/// Builds the kernel of the state and its lower bound `-K`.
pub fn green_lower_bound(state: &MetricState) -> Result<GreenBound> {
    Ok(GreenKernel::new(state)?.bound())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, metric_state, ModelConfig, SymmetryMode};
    use std::f64::consts::PI;

    #[test]
    fn canonical_kernel_inverts_degree_one() {
        let model = build_model(ModelConfig::canonical(12, SymmetryMode::Full)).unwrap();
        let st = metric_state(&model, model.zero()).unwrap();
        let g = GreenKernel::new(&st).unwrap();
        let y = model.harmonic(1, 0, 1.0).unwrap();
        // de Rham eigenvalue 8 on degree one
        assert!(g.apply(&y).unwrap().max_abs_diff(&y.scaled(0.125)) < 1e-12);
        assert!(g.apply(&model.constant(1.0)).unwrap().max_abs() < 1e-12);
        let y2 = model.harmonic(2, 1, 1.0).unwrap();
        assert!(g.reproduction_error(&y2).unwrap() < 1e-10);
    }

    #[test]
    fn canonical_bound_is_near_antipodal_value() {
        let model = build_model(ModelConfig::canonical(16, SymmetryMode::Full)).unwrap();
        let st = metric_state(&model, model.zero()).unwrap();
        let b = green_lower_bound(&st).unwrap();
        assert!(b.row_mean_max < 1e-12);
        assert!(b.asymmetry < 1e-12);
        let exact = 1.0 / (8.0 * PI * PI);
        assert!((b.k - exact).abs() < 0.1 * exact, "{} vs {exact}", b.k);
    }
}
