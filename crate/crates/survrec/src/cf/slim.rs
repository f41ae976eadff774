//! SLIM: sparse non-negative item-item regression by coordinate descent.
//!
//! Per item j, minimizes
//! `0.5 * ||E_j - E w||^2 + l1 * |w|_1 + 0.5 * l2 * |w|^2`
//! subject to `w >= 0`, `w_j = 0`, then keeps the `topk` largest
//! coefficients. Columns are independent and solved in parallel off a
//! shared Gram matrix.

use ndarray::Array2;
use rayon::prelude::*;

use crate::cf::CfState;
use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const REL_IMPROVEMENT_STOP: f64 = 1e-4;

/// Sparse coefficients plus the per-sweep objective trace.
type SolvedColumn = (Vec<(usize, f64)>, Vec<f64>);

pub(super) fn fit(
    e: &EnrollmentMatrix,
    topk: usize,
    l1_norm: f64,
    l2_norm: f64,
) -> Result<(CfState, Vec<f64>)> {
    if topk < 1 {
        return Err(Error::Parameter("topk must be >= 1".to_string()));
    }
    if !l1_norm.is_finite() || !l2_norm.is_finite() || l1_norm < 0.0 || l2_norm < 0.0 {
        return Err(Error::Parameter("penalties must be >= 0".to_string()));
    }
    if l1_norm == 0.0 && l2_norm == 0.0 {
        return Err(Error::Parameter(
            "l1_norm and l2_norm must not both be 0".to_string(),
        ));
    }
    let n = e.n_courses();
    let dense = e.to_dense();
    let gram = dense.t().dot(&dense); // n x n

    let solved: Vec<SolvedColumn> = (0..n)
        .into_par_iter()
        .map(|j| solve_column(&gram, j, topk, l1_norm, l2_norm))
        .collect();

    let mut columns = Vec::with_capacity(n);
    let mut trace = Vec::new();
    for (col, col_trace) in solved {
        columns.push(col);
        trace.extend(col_trace);
    }
    Ok((CfState::SparseItemWeights { columns }, trace))
}

/// Coordinate descent on one column against the shared Gram matrix.
/// Returns the sparse solution and the per-sweep objective trace.
fn solve_column(gram: &Array2<f64>, j: usize, topk: usize, l1: f64, l2: f64) -> SolvedColumn {
    let n = gram.nrows();
    let mut w = vec![0.0; n];
    // s = Gram * w, maintained incrementally.
    let mut s = vec![0.0; n];
    let objective = |w: &[f64], s: &[f64]| -> f64 {
        let wgw: f64 = w.iter().zip(s.iter()).map(|(a, b)| a * b).sum();
        let wg_j: f64 = (0..n).map(|k| w[k] * gram[[k, j]]).sum();
        let l1_term: f64 = w.iter().sum();
        let l2_term: f64 = w.iter().map(|v| v * v).sum();
        0.5 * (gram[[j, j]] - 2.0 * wg_j + wgw) + l1 * l1_term + 0.5 * l2 * l2_term
    };

    let mut trace = vec![objective(&w, &s)];
    for _ in 0..MAX_SWEEPS {
        for k in 0..n {
            if k == j {
                continue;
            }
            let denom = gram[[k, k]] + l2;
            if denom <= 0.0 {
                continue;
            }
            // Partial residual correlation excluding w_k itself.
            let rho = gram[[k, j]] - (s[k] - gram[[k, k]] * w[k]);
            let updated = ((rho - l1) / denom).max(0.0);
            let delta = updated - w[k];
            if delta != 0.0 {
                w[k] = updated;
                for i in 0..n {
                    s[i] += delta * gram[[i, k]];
                }
            }
        }
        let current = objective(&w, &s);
        let previous = *trace.last().unwrap();
        trace.push(current);
        if previous - current <= REL_IMPROVEMENT_STOP * previous.abs().max(1e-12) {
            break;
        }
    }

    let mut entries: Vec<(usize, f64)> = w
        .iter()
        .enumerate()
        .filter(|&(_, &v)| v > 0.0)
        .map(|(i, &v)| (i, v))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite weights")
            .then(a.0.cmp(&b.0))
    });
    entries.truncate(topk);
    entries.sort_by_key(|&(i, _)| i);
    (entries, trace)
}
