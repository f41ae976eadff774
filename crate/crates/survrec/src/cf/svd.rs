//! PureSVD: truncated singular value decomposition of the enrollment matrix.

use ndarray::Array2;

use crate::cf::CfState;
use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};
use crate::linalg;

pub(super) fn fit(e: &EnrollmentMatrix, n_factors: usize) -> Result<CfState> {
    let max_rank = e.n_users().min(e.n_courses());
    if n_factors < 1 || n_factors > max_rank {
        return Err(Error::Parameter(format!(
            "n_factors must be in 1..={max_rank}, got {n_factors}"
        )));
    }
    let dense = linalg::to_dmatrix(&e.to_dense());
    let svd = dense.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let k = n_factors;

    // Score matrix is U_k S_k V_k^T; fold the singular values into the user
    // side so scoring is a plain dot product.
    let mut user_factors = Array2::zeros((e.n_users(), k));
    for r in 0..e.n_users() {
        for c in 0..k {
            user_factors[[r, c]] = u[(r, c)] * svd.singular_values[c];
        }
    }
    let mut item_factors = Array2::zeros((e.n_courses(), k));
    for r in 0..e.n_courses() {
        for c in 0..k {
            item_factors[[r, c]] = vt[(c, r)];
        }
    }
    Ok(CfState::Factors {
        user_factors,
        item_factors,
    })
}
