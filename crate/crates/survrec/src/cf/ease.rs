//! EASE: closed-form linear item-item model.
//!
//! With `G = E^T E + l2 * I` and `P = G^{-1}`, the weight matrix is
//! `B = I - P * diag(1 / diag(P))`, which has an exactly zero diagonal.
//! Scores are `E * B`.

use nalgebra::Cholesky;
use ndarray::Array2;

use crate::cf::CfState;
use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};
use crate::linalg;

pub(super) fn fit(e: &EnrollmentMatrix, l2_norm: f64) -> Result<CfState> {
    if !l2_norm.is_finite() || l2_norm <= 0.0 {
        return Err(Error::Parameter("l2_norm must be > 0".to_string()));
    }
    let n = e.n_courses();
    let dense = linalg::to_dmatrix(&e.to_dense());
    let mut gram = dense.transpose() * &dense;
    for d in 0..n {
        gram[(d, d)] += l2_norm;
    }
    let p = Cholesky::new(gram)
        .expect("gram + l2 I is positive definite for l2 > 0")
        .inverse();
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                weights[[i, j]] = -p[(i, j)] / p[(j, j)];
            }
        }
    }
    Ok(CfState::ItemWeights { weights })
}

#[cfg(test)]
mod tests {
    use crate::cf::test_util::random_enrollment;
    use crate::cf::{CfConfig, CfState};

    fn weights(model: &crate::cf::FittedRecommender) -> &ndarray::Array2<f64> {
        match model.state() {
            CfState::ItemWeights { weights } => weights,
            _ => panic!("ease state expected"),
        }
    }

    #[test]
    fn diagonal_is_exactly_zero() {
        let e = random_enrollment(12, 7, 0.4, 31);
        let model = CfConfig::Ease { l2_norm: 2.5 }.fit(&e).unwrap();
        let b = weights(&model);
        for j in 0..e.n_courses() {
            assert_eq!(b[[j, j]], 0.0);
        }
    }

    /// Plain Gaussian-elimination solve of G x = rhs, no pivoting tricks.
    fn gaussian_solve(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
        let n = rhs.len();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            rhs.swap(col, pivot);
            let diag = a[col][col];
            for row in (col + 1)..n {
                let f = a[row][col] / diag;
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for k in (row + 1)..n {
                s -= a[row][k] * x[k];
            }
            x[row] = s / a[row][row];
        }
        x
    }

    #[test]
    fn matches_direct_linear_solver_oracle() {
        let e = random_enrollment(9, 6, 0.5, 12);
        let l2 = 1.0;
        let model = CfConfig::Ease { l2_norm: l2 }.fit(&e).unwrap();
        let b = weights(&model);

        let n = e.n_courses();
        let dense = e.to_dense();
        let mut gram = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for u in 0..e.n_users() {
                    s += dense[[u, i]] * dense[[u, j]];
                }
                gram[i][j] = s + if i == j { l2 } else { 0.0 };
            }
        }
        // Solve G p_j = e_j column by column to get P, then form B.
        let mut p = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut rhs = vec![0.0; n];
            rhs[j] = 1.0;
            let col = gaussian_solve(gram.clone(), rhs);
            for i in 0..n {
                p[i][j] = col[i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j { 0.0 } else { -p[i][j] / p[j][j] };
                assert!(
                    (b[[i, j]] - expected).abs() < 1e-10,
                    "B[{i},{j}] = {} vs oracle {}",
                    b[[i, j]],
                    expected
                );
            }
        }
    }

    #[test]
    fn huge_regularization_shrinks_weights_to_zero() {
        let e = random_enrollment(10, 6, 0.4, 2);
        let model = CfConfig::Ease { l2_norm: 1e9 }.fit(&e).unwrap();
        let b = weights(&model);
        let frob: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(frob < 1e-6, "|B|_F = {frob}");
    }
}
