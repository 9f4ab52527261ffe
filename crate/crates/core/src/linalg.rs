//! Dense least squares.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a x = b` via SVD.
///
/// Singular values below `max_sv * max(m, n) * eps` are treated as zero, so
/// rank-deficient systems resolve to the pseudo-inverse solution.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DVector::zeros(n);
    }
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if max_sv == 0.0 {
        return DVector::zeros(n);
    }
    let tol = max_sv * (m.max(n) as f64) * f64::EPSILON;
    svd.solve(b, tol).expect("both SVD factors were computed")
}

/// Builds a row-major design matrix.
pub fn design(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}
