//! Dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

/// Solution of `K v = λ M v` for symmetric `K` and positive-definite `M`.
/// Eigenvalues ascend; eigenvectors are `M`-orthonormal columns.
#[derive(Clone, Debug)]
pub struct GeneralizedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn generalized_symmetric_eigen(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<GeneralizedEigen> {
    let chol = Cholesky::new(m.clone()).ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let mut c = &l_inv * k * l_inv.transpose();
    symmetrize(&mut c);
    let eig = SymmetricEigen::try_new(c, 1e-14, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let z = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let vectors = l_inv.transpose() * z;
    Ok(GeneralizedEigen { values, vectors })
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    a.clone().singular_values().iter().copied().fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigen_of_diagonal_pair() {
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![6.0, 2.0, 12.0]));
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0, 3.0]));
        let e = generalized_symmetric_eigen(&k, &m).unwrap();
        assert_eq!(e.values.len(), 3);
        for (got, want) in e.values.iter().zip([2.0, 3.0, 4.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let g = e.vectors.transpose() * &m * &e.vectors;
        assert!((g - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn singular_values_of_rank_deficient() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(smallest_singular_value(&a) < 1e-12);
    }
}
