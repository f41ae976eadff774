//! Conversions between the crate's `ndarray` data matrices and `nalgebra`
//! decompositions, plus a shared symmetric-eigen helper.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.dim();
    DMatrix::from_fn(rows, cols, |r, c| a[[r, c]])
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted
/// descending. Returns `(eigenvalues, eigenvectors)` with eigenvectors as
/// columns, matching the eigenvalue order.
pub(crate) fn symmetric_eigen_sorted(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let values = DVector::from_fn(order.len(), |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}
