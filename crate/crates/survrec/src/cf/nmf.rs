//! Non-negative matrix factorization by HALS coordinate descent.
//!
//! Minimizes the squared reconstruction error
//! `0.5 * ||E - P Q^T||^2` plus an elastic-net penalty
//! `a * (r * (|P|_1 + |Q|_1) + (1 - r) / 2 * (|P|_2^2 + |Q|_2^2))`
//! with `r = l1_ratio` and a fixed weak strength `a`. Each column update
//! is an exact minimizer, so the objective never increases.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cf::CfState;
use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};

/// Fixed elastic-net strength; only the l1/l2 mix is tuned.
const PENALTY_STRENGTH: f64 = 1e-5;
const MAX_ITER: usize = 200;
const REL_TOL: f64 = 1e-7;

pub(super) fn fit(
    e: &EnrollmentMatrix,
    n_factors: usize,
    l1_ratio: f64,
    seed: u64,
) -> Result<(CfState, Vec<f64>)> {
    if n_factors < 1 {
        return Err(Error::Parameter("n_factors must be >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&l1_ratio) {
        return Err(Error::Parameter("l1_ratio must be in [0, 1]".to_string()));
    }
    let m = e.n_users();
    let n = e.n_courses();
    let dense = e.to_dense();
    let mean = dense.mean().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let scale = mean / n_factors as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Array2::from_shape_fn((m, n_factors), |_| rng.random::<f64>() * scale);
    let mut q = Array2::from_shape_fn((n, n_factors), |_| rng.random::<f64>() * scale);

    let l1 = PENALTY_STRENGTH * l1_ratio;
    let l2 = PENALTY_STRENGTH * (1.0 - l1_ratio);

    let mut trace = Vec::with_capacity(MAX_ITER);
    for _ in 0..MAX_ITER {
        hals_half_step(&dense, &mut p, &q, l1, l2);
        let dense_t = dense.t();
        hals_half_step(&dense_t.to_owned(), &mut q, &p, l1, l2);

        let objective = objective(&dense, &p, &q, l1, l2);
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (prev - objective).abs() <= REL_TOL * prev.abs().max(1.0));
        trace.push(objective);
        if done {
            break;
        }
    }

    Ok((
        CfState::Factors {
            user_factors: p,
            item_factors: q,
        },
        trace,
    ))
}

/// Update every column of `p` (rows-by-factors) against fixed `q`.
fn hals_half_step(target: &Array2<f64>, p: &mut Array2<f64>, q: &Array2<f64>, l1: f64, l2: f64) {
    let k = p.ncols();
    let gram = q.t().dot(q); // k x k
    let tq = target.dot(q); // rows x k
    for j in 0..k {
        let g_jj = gram[[j, j]] + l2;
        let denom = if g_jj > 1e-12 { g_jj } else { 1e-12 };
        // numer = (T q_j) - P (gram col j) + p_j * gram_jj - l1
        let gram_col = gram.column(j);
        let correction: Array1<f64> = p.dot(&gram_col);
        for r in 0..p.nrows() {
            let numer = tq[[r, j]] - correction[r] + p[[r, j]] * gram[[j, j]] - l1;
            p[[r, j]] = (numer / denom).max(0.0);
        }
    }
}

fn objective(target: &Array2<f64>, p: &Array2<f64>, q: &Array2<f64>, l1: f64, l2: f64) -> f64 {
    let recon = p.dot(&q.t());
    let mut sq = 0.0;
    ndarray::Zip::from(target).and(&recon).for_each(|&t, &r| {
        let d = t - r;
        sq += d * d;
    });
    let l1_term: f64 = p.iter().chain(q.iter()).sum();
    let l2_term: f64 = p.iter().chain(q.iter()).map(|v| v * v).sum();
    0.5 * sq + l1 * l1_term + 0.5 * l2 * l2_term
}
