//! User- and item-based nearest neighbors with shrunk cosine similarity.

use ndarray::Array2;

use crate::cf::CfState;
use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};

/// Cosine similarity with an additive shrink in the denominator:
/// `dot / (|a| * |b| + shrink)`. All-zero profiles get similarity 0.
pub fn shrunk_cosine(dot: f64, norm_a: f64, norm_b: f64, shrink: f64) -> f64 {
    let denom = norm_a * norm_b + shrink;
    if denom == 0.0 { 0.0 } else { dot / denom }
}

pub(super) fn fit(
    e: &EnrollmentMatrix,
    n_neighbors: usize,
    shrink: f64,
    user_based: bool,
) -> Result<CfState> {
    if n_neighbors < 1 {
        return Err(Error::Parameter("n_neighbors must be >= 1".to_string()));
    }
    if !shrink.is_finite() || shrink < 0.0 {
        return Err(Error::Parameter("shrink must be >= 0".to_string()));
    }
    let dense = e.to_dense();
    let profiles: Array2<f64> = if user_based {
        dense
    } else {
        dense.t().to_owned()
    };
    let m = profiles.nrows();
    let gram = profiles.dot(&profiles.t());
    let norms: Vec<f64> = (0..m).map(|a| gram[[a, a]].sqrt()).collect();

    let mut lists: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    for a in 0..m {
        let mut sims: Vec<(usize, f64)> = (0..m)
            .filter(|&b| b != a)
            .map(|b| (b, shrunk_cosine(gram[[a, b]], norms[a], norms[b], shrink)))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        sims.sort_by(|x, y| {
            y.1.partial_cmp(&x.1)
                .expect("finite similarity")
                .then(x.0.cmp(&y.0))
        });
        sims.truncate(n_neighbors);
        lists.push(sims);
    }
    Ok(CfState::Neighbors { user_based, lists })
}
