//! Weighted regularized matrix factorization for implicit feedback,
//! optimized by alternating least squares.
//!
//! Observed cells carry confidence `1 + confidence_weight` toward target 1;
//! unobserved cells carry confidence 1 toward target 0. Each half-step
//! solves the per-user (per-item) ridge system exactly, so the regularized
//! objective is non-increasing per full epoch.

use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cf::CfState;
use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};

pub(super) fn fit(
    e: &EnrollmentMatrix,
    n_factors: usize,
    regularization: f64,
    epochs: usize,
    confidence_weight: f64,
    seed: u64,
) -> Result<(CfState, Vec<f64>)> {
    if n_factors < 1 {
        return Err(Error::Parameter("n_factors must be >= 1".to_string()));
    }
    if epochs < 1 {
        return Err(Error::Parameter("epochs must be >= 1".to_string()));
    }
    if !regularization.is_finite() || regularization <= 0.0 {
        return Err(Error::Parameter("regularization must be > 0".to_string()));
    }
    if !confidence_weight.is_finite() || confidence_weight < 0.0 {
        return Err(Error::Parameter(
            "confidence_weight must be >= 0".to_string(),
        ));
    }
    let m = e.n_users();
    let n = e.n_courses();
    let k = n_factors;

    // Only the item side needs an init; the first half-step solves users
    // from it. Starting users at zero makes the fit invariant to user order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() * 0.1);
    let mut users = DMatrix::zeros(m, k);

    let rows: Vec<&[usize]> = (0..m).map(|u| e.user_row(u)).collect();
    let cols: Vec<&[usize]> = (0..n).map(|c| e.course_col(c)).collect();

    let mut trace = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        solve_side(&mut users, &items, &rows, regularization, confidence_weight);
        solve_side(&mut items, &users, &cols, regularization, confidence_weight);
        trace.push(objective(
            &users,
            &items,
            &rows,
            regularization,
            confidence_weight,
        ));
    }

    let user_factors = Array2::from_shape_fn((m, k), |(r, c)| users[(r, c)]);
    let item_factors = Array2::from_shape_fn((n, k), |(r, c)| items[(r, c)]);
    Ok((
        CfState::Factors {
            user_factors,
            item_factors,
        },
        trace,
    ))
}

/// Solve `this` rows given fixed `other` factors. `observed[r]` lists the
/// other-side indices interacting with row `r`.
fn solve_side(
    this: &mut DMatrix<f64>,
    other: &DMatrix<f64>,
    observed: &[&[usize]],
    regularization: f64,
    alpha: f64,
) {
    let k = other.ncols();
    let mut base = other.transpose() * other;
    for d in 0..k {
        base[(d, d)] += regularization;
    }
    let solutions: Vec<DVector<f64>> = (0..this.nrows())
        .into_par_iter()
        .map(|r| {
            let mut a = base.clone();
            let mut b = DVector::zeros(k);
            for &j in observed[r] {
                let y = other.row(j);
                for p in 0..k {
                    for q in 0..k {
                        a[(p, q)] += alpha * y[p] * y[q];
                    }
                    b[p] += (1.0 + alpha) * y[p];
                }
            }
            Cholesky::new(a)
                .expect("ridge system is positive definite")
                .solve(&b)
        })
        .collect();
    for (r, sol) in solutions.into_iter().enumerate() {
        this.row_mut(r).copy_from(&sol.transpose());
    }
}

/// Full weighted objective:
/// `sum_ui c_ui (p_ui - x_u . y_i)^2 + reg * (|X|^2 + |Y|^2)`.
fn objective(
    users: &DMatrix<f64>,
    items: &DMatrix<f64>,
    rows: &[&[usize]],
    regularization: f64,
    alpha: f64,
) -> f64 {
    // Sum over all pairs of (x.y)^2 via the factor grams, then correct the
    // observed cells where confidence and target differ.
    let gram = items.transpose() * items;
    let mut total = 0.0;
    for u in 0..users.nrows() {
        let x = users.row(u);
        total += (x * &gram).dot(&x);
        for &i in rows[u] {
            let s = x.dot(&items.row(i));
            total += -s * s + (1.0 + alpha) * (1.0 - s) * (1.0 - s);
        }
    }
    total
        + regularization
            * (users.iter().map(|v| v * v).sum::<f64>() + items.iter().map(|v| v * v).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use crate::cf::test_util::random_enrollment;
    use crate::cf::{CfConfig, test_util::enrollment_from_rows};

    #[test]
    fn scalar_fixed_point_approaches_one() {
        let e = enrollment_from_rows(&[&[1]]);
        let model = CfConfig::Wrmf {
            n_factors: 1,
            regularization: 0.01,
            epochs: 50,
            confidence_weight: 40.0,
            seed: 0,
        }
        .fit(&e)
        .unwrap();
        let score = model.score_user(&e, 0)[0];
        assert!(score > 0.95 && score <= 1.0 + 1e-9, "score {score}");
    }

    #[test]
    fn objective_non_increasing_per_epoch() {
        let e = random_enrollment(15, 10, 0.3, 8);
        let model = CfConfig::Wrmf {
            n_factors: 4,
            regularization: 0.1,
            epochs: 25,
            confidence_weight: 40.0,
            seed: 5,
        }
        .fit(&e)
        .unwrap();
        let trace = model.objective_trace();
        assert_eq!(trace.len(), 25);
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-8,
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn user_permutation_leaves_objective_unchanged() {
        // Same interactions, users relabeled so their index order flips.
        let a = enrollment_from_rows(&[
            &[1, 1, 0, 0],
            &[0, 1, 1, 0],
            &[0, 0, 1, 1],
            &[1, 0, 0, 1],
            &[1, 1, 1, 0],
        ]);
        let b = enrollment_from_rows(&[
            &[1, 1, 1, 0],
            &[1, 0, 0, 1],
            &[0, 0, 1, 1],
            &[0, 1, 1, 0],
            &[1, 1, 0, 0],
        ]);
        let config = |seed| CfConfig::Wrmf {
            n_factors: 3,
            regularization: 0.05,
            epochs: 15,
            confidence_weight: 40.0,
            seed,
        };
        let ma = config(9).fit(&a).unwrap();
        let mb = config(9).fit(&b).unwrap();
        let fa = ma.objective_trace().last().unwrap();
        let fb = mb.objective_trace().last().unwrap();
        assert!((fa - fb).abs() < 1e-8, "{fa} vs {fb}");
    }

    #[test]
    fn same_seed_is_bit_reproducible() {
        let e = random_enrollment(12, 9, 0.35, 3);
        let config = CfConfig::Wrmf {
            n_factors: 3,
            regularization: 0.1,
            epochs: 10,
            confidence_weight: 40.0,
            seed: 77,
        };
        let a = config.fit(&e).unwrap();
        let b = config.fit(&e).unwrap();
        for u in 0..e.n_users() {
            assert_eq!(a.score_user(&e, u), b.score_user(&e, u));
        }
    }
}
