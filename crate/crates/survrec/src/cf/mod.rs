//! Collaborative-filtering recommenders over the binary enrollment matrix.
//!
//! All seven models share one contract: fit on an [`EnrollmentMatrix`],
//! score every unobserved user-course pair, rank the top `l` per user. The
//! models are interchangeable in step 1 of the pipeline.
//!
//! | kind | learned state |
//! |------|---------------|
//! | UKNN / IKNN | top-n shrunk-cosine neighbor lists |
//! | SVD | truncated singular factors (PureSVD) |
//! | NMF | non-negative factors, HALS coordinate descent |
//! | WRMF | implicit-feedback weighted ALS factors |
//! | EASE | closed-form item-item weight matrix |
//! | SLIM | sparse non-negative item-item weights, coordinate descent |

mod ease;
mod knn;
mod nmf;
mod slim;
mod svd;
mod wrmf;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EnrollmentMatrix;
use crate::error::{Error, Result};
use crate::rerank::{Provenance, RankedList};

pub use knn::shrunk_cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CfKind {
    Uknn,
    Iknn,
    Svd,
    Nmf,
    Wrmf,
    Ease,
    Slim,
}

impl CfKind {
    pub const ALL: [CfKind; 7] = [
        CfKind::Uknn,
        CfKind::Iknn,
        CfKind::Svd,
        CfKind::Nmf,
        CfKind::Wrmf,
        CfKind::Ease,
        CfKind::Slim,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CfKind::Uknn => "uknn",
            CfKind::Iknn => "iknn",
            CfKind::Svd => "svd",
            CfKind::Nmf => "nmf",
            CfKind::Wrmf => "wrmf",
            CfKind::Ease => "ease",
            CfKind::Slim => "slim",
        }
    }

    pub fn parse(name: &str) -> Option<CfKind> {
        CfKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// A model choice plus its hyperparameters; `fit` dispatches on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CfConfig {
    Uknn {
        n_neighbors: usize,
        shrink: f64,
    },
    Iknn {
        n_neighbors: usize,
        shrink: f64,
    },
    Svd {
        n_factors: usize,
    },
    Nmf {
        n_factors: usize,
        l1_ratio: f64,
        seed: u64,
    },
    Wrmf {
        n_factors: usize,
        regularization: f64,
        epochs: usize,
        confidence_weight: f64,
        seed: u64,
    },
    Ease {
        l2_norm: f64,
    },
    Slim {
        topk: usize,
        l1_norm: f64,
        l2_norm: f64,
    },
}

impl CfConfig {
    pub fn kind(&self) -> CfKind {
        match self {
            CfConfig::Uknn { .. } => CfKind::Uknn,
            CfConfig::Iknn { .. } => CfKind::Iknn,
            CfConfig::Svd { .. } => CfKind::Svd,
            CfConfig::Nmf { .. } => CfKind::Nmf,
            CfConfig::Wrmf { .. } => CfKind::Wrmf,
            CfConfig::Ease { .. } => CfKind::Ease,
            CfConfig::Slim { .. } => CfKind::Slim,
        }
    }

    pub fn fit(&self, e: &EnrollmentMatrix) -> Result<FittedRecommender> {
        let (state, objective_trace) = match *self {
            CfConfig::Uknn {
                n_neighbors,
                shrink,
            } => (knn::fit(e, n_neighbors, shrink, true)?, Vec::new()),
            CfConfig::Iknn {
                n_neighbors,
                shrink,
            } => (knn::fit(e, n_neighbors, shrink, false)?, Vec::new()),
            CfConfig::Svd { n_factors } => (svd::fit(e, n_factors)?, Vec::new()),
            CfConfig::Nmf {
                n_factors,
                l1_ratio,
                seed,
            } => nmf::fit(e, n_factors, l1_ratio, seed)?,
            CfConfig::Wrmf {
                n_factors,
                regularization,
                epochs,
                confidence_weight,
                seed,
            } => wrmf::fit(
                e,
                n_factors,
                regularization,
                epochs,
                confidence_weight,
                seed,
            )?,
            CfConfig::Ease { l2_norm } => (ease::fit(e, l2_norm)?, Vec::new()),
            CfConfig::Slim {
                topk,
                l1_norm,
                l2_norm,
            } => slim::fit(e, topk, l1_norm, l2_norm)?,
        };
        Ok(FittedRecommender {
            config: self.clone(),
            users: e.users().to_vec(),
            courses: e.courses().to_vec(),
            state,
            objective_trace,
        })
    }
}

/// Model-specific learned state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CfState {
    /// Per-row (user or item) neighbor lists of `(index, similarity)`.
    Neighbors {
        user_based: bool,
        lists: Vec<Vec<(usize, f64)>>,
    },
    /// Score is the dot product of a user row and an item row.
    Factors {
        user_factors: Array2<f64>,
        item_factors: Array2<f64>,
    },
    /// Dense item-item weights; scores = E · B.
    ItemWeights { weights: Array2<f64> },
    /// Sparse per-column item weights; column j holds `(item, weight)`.
    SparseItemWeights { columns: Vec<Vec<(usize, f64)>> },
}

/// An immutable fitted recommender: kind, hyperparameters, the id-to-index
/// mapping it was fitted with, and the learned arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedRecommender {
    config: CfConfig,
    users: Vec<String>,
    courses: Vec<String>,
    state: CfState,
    /// Per-outer-iteration training objective for iterative solvers
    /// (NMF, WRMF) or per-column traces flattened (SLIM); empty for
    /// closed-form models.
    objective_trace: Vec<f64>,
}

impl FittedRecommender {
    pub fn kind(&self) -> CfKind {
        self.config.kind()
    }

    pub fn config(&self) -> &CfConfig {
        &self.config
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn courses(&self) -> &[String] {
        &self.courses
    }

    pub fn state(&self) -> &CfState {
        &self.state
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    /// Scores for every course for one user. `e` must be the matrix the
    /// model was fitted on (the scorer reads enrollment rows for
    /// neighborhood and item-weight models).
    pub fn score_user(&self, e: &EnrollmentMatrix, user: usize) -> Vec<f64> {
        let n = self.courses.len();
        match &self.state {
            CfState::Neighbors {
                user_based: true,
                lists,
            } => {
                let mut scores = vec![0.0; n];
                for &(v, sim) in &lists[user] {
                    for &c in e.user_row(v) {
                        scores[c] += sim;
                    }
                }
                scores
            }
            CfState::Neighbors {
                user_based: false,
                lists,
            } => {
                let mut enrolled = vec![false; n];
                for &c in e.user_row(user) {
                    enrolled[c] = true;
                }
                (0..n)
                    .map(|c| {
                        lists[c]
                            .iter()
                            .filter(|&&(j, _)| enrolled[j])
                            .map(|&(_, sim)| sim)
                            .sum()
                    })
                    .collect()
            }
            CfState::Factors {
                user_factors,
                item_factors,
            } => {
                let u_row = user_factors.row(user);
                (0..n).map(|c| u_row.dot(&item_factors.row(c))).collect()
            }
            CfState::ItemWeights { weights } => {
                let mut scores = vec![0.0; n];
                for &j in e.user_row(user) {
                    let row = weights.row(j);
                    for c in 0..n {
                        scores[c] += row[c];
                    }
                }
                scores
            }
            CfState::SparseItemWeights { columns } => {
                let mut enrolled = vec![false; n];
                for &c in e.user_row(user) {
                    enrolled[c] = true;
                }
                (0..n)
                    .map(|c| {
                        columns[c]
                            .iter()
                            .filter(|&&(j, _)| enrolled[j])
                            .map(|&(_, w)| w)
                            .sum()
                    })
                    .collect()
            }
        }
    }

    /// Score a single pair addressed by opaque ids.
    pub fn score_pair(&self, e: &EnrollmentMatrix, user: &str, course: &str) -> Result<f64> {
        let u = self
            .users
            .binary_search_by(|x| x.as_str().cmp(user))
            .map_err(|_| Error::UnknownUser(user.to_string()))?;
        let c = self
            .courses
            .binary_search_by(|x| x.as_str().cmp(course))
            .map_err(|_| Error::UnknownCourse(course.to_string()))?;
        Ok(self.score_user(e, u)[c])
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<FittedRecommender> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Scores for the unobserved pairs of each user, in user-index order.
#[derive(Debug, Clone)]
pub struct ScoredCandidates {
    /// Per user: `(course, score)` for courses the user is not enrolled in.
    pub per_user: Vec<Vec<(usize, f64)>>,
}

/// Score exactly the zero cells of `e` for every user.
pub fn score_unobserved(
    model: &FittedRecommender,
    e: &EnrollmentMatrix,
) -> Result<ScoredCandidates> {
    if model.users().len() != e.n_users() || model.courses().len() != e.n_courses() {
        return Err(Error::ShapeMismatch {
            expected: model.users().len(),
            got: e.n_users(),
        });
    }
    let per_user: Vec<Vec<(usize, f64)>> = (0..e.n_users())
        .into_par_iter()
        .map(|u| {
            let scores = model.score_user(e, u);
            let row = e.user_row(u);
            let mut out = Vec::with_capacity(e.n_courses() - row.len());
            for (c, &s) in scores.iter().enumerate() {
                if !e.is_enrolled(u, c) {
                    debug_assert!(s.is_finite());
                    out.push((c, s));
                }
            }
            out
        })
        .collect();
    Ok(ScoredCandidates { per_user })
}

/// Keep each user's `l` highest-scoring candidates, descending score, ties
/// broken by ascending course index. Users with fewer than `l` candidates
/// get shorter lists.
pub fn rank_top_l(candidates: &ScoredCandidates, l: usize) -> Result<Vec<RankedList>> {
    if l < 1 {
        return Err(Error::Parameter("rank_top_l requires l >= 1".to_string()));
    }
    Ok(candidates
        .per_user
        .iter()
        .enumerate()
        .map(|(u, cands)| {
            let mut order: Vec<(usize, f64)> = cands.clone();
            order.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .expect("finite scores")
                    .then(a.0.cmp(&b.0))
            });
            order.truncate(l);
            RankedList::from_ordered(
                u,
                order
                    .into_iter()
                    .map(|(c, s)| {
                        (
                            c,
                            Provenance {
                                cf_score: Some(s),
                                ..Default::default()
                            },
                        )
                    })
                    .collect(),
            )
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod test_util {
    use crate::data::{self, EnrollmentMatrix, EventKind, InteractionRecord};

    /// Build an enrollment matrix from 0/1 rows. Users are `u00..`, courses
    /// `c00..`, so lexicographic index order matches row/column order.
    pub fn enrollment_from_rows(rows: &[&[u8]]) -> EnrollmentMatrix {
        let mut records = Vec::new();
        for (u, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v != 0 {
                    records.push(InteractionRecord {
                        user: format!("u{u:02}"),
                        course: format!("c{c:02}"),
                        elapsed_days: (u + c) as f64,
                        event: EventKind::Completed,
                    });
                }
            }
        }
        let m = data::normalize_times(&records).unwrap();
        data::binarize(&m)
    }

    pub fn random_enrollment(
        n_users: usize,
        n_courses: usize,
        density: f64,
        seed: u64,
    ) -> EnrollmentMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut rows: Vec<Vec<u8>> = vec![vec![0; n_courses]; n_users];
        for (u, row) in rows.iter_mut().enumerate() {
            let mut any = false;
            for v in row.iter_mut() {
                if rng.random_bool(density) {
                    *v = 1;
                    any = true;
                }
            }
            if !any {
                row[u % n_courses] = 1;
            }
        }
        let refs: Vec<&[u8]> = rows.iter().map(|r| r.as_slice()).collect();
        enrollment_from_rows(&refs)
    }
}
