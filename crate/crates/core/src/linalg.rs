//! Dense linear algebra used by the centroid update and the regression fit.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value / eigenvalue tolerance.
pub const RANK_TOL: f64 = 1e-10;

const EIGEN_MAX_ITER: usize = 100_000;

/// Eigenvalues (ascending) and matching unit eigenvectors of a symmetric
/// matrix given row-major. Returns `None` if the QR iteration fails.
pub fn symmetric_eigen(n: usize, matrix: &[f64]) -> Option<(Vec<f64>, Vec<Vec<f64>>)> {
    assert_eq!(matrix.len(), n * n);
    let m = DMatrix::from_row_slice(n, n, matrix);
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITER)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    Some((values, vectors))
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coeffs: Vec<f64>,
    pub rank: usize,
    pub singular_values: Vec<f64>,
}

impl LeastSquares {
    pub fn rank_deficient(&self) -> bool {
        self.rank < self.coeffs.len()
    }
}

/// Minimum-norm solution of `min ||A x - b||` through the SVD. Singular
/// values below `RANK_TOL * sigma_max` are treated as zero.
pub fn lstsq_min_norm(rows: usize, cols: usize, a: &[f64], b: &[f64]) -> Option<LeastSquares> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(b.len(), rows);
    let a = DMatrix::from_row_slice(rows, cols, a);
    let b = DVector::from_column_slice(b);
    let svd = a.try_svd(true, true, f64::EPSILON, 0)?;
    let sigma_max = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = RANK_TOL * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let u = svd.u.as_ref()?;
    let v_t = svd.v_t.as_ref()?;

    let mut x = DVector::zeros(cols);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cut {
            let coef = u.column(i).dot(&b) / s;
            x += v_t.row(i).transpose() * coef;
        }
    }
    Some(LeastSquares {
        coeffs: x.iter().copied().collect(),
        rank,
        singular_values: svd.singular_values.iter().copied().collect(),
    })
}
