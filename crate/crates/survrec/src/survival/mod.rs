//! Survival learners and their evaluation.
//!
//! Three models share one contract: fit on a [`SurvivalDataset`], predict
//! a scalar risk per row where higher risk means the event is expected
//! earlier:
//!
//! * CoxNet: elastic-net penalized Cox proportional hazards;
//! * RSF: random survival forest with log-rank splits and Nelson-Aalen
//!   leaf hazards;
//! * XGBCox: gradient-boosted regression trees on the Cox partial
//!   likelihood.
//!
//! Model selection uses the cross-validated concordance index. The
//! baseline hazard is never estimated; only relative risks are consumed
//! downstream.

mod cox;
mod rsf;
mod tree;
mod xgb;

use ndarray::Array2;
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{EventDefinition, SurvivalDataset, SurvivalTargets};

pub use cox::{
    CoxNetModel, PartialLikelihood, cox_gradient, cox_partial_loglik, cox_partial_loglik_at,
};
pub use rsf::{ChfLeaf, RsfModel, RsfParams, nelson_aalen};
pub use xgb::{XgbCoxModel, XgbParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SurvivalKind {
    CoxNet,
    Rsf,
    XgbCox,
}

impl SurvivalKind {
    pub const ALL: [SurvivalKind; 3] = [
        SurvivalKind::CoxNet,
        SurvivalKind::Rsf,
        SurvivalKind::XgbCox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SurvivalKind::CoxNet => "coxnet",
            SurvivalKind::Rsf => "rsf",
            SurvivalKind::XgbCox => "xgb",
        }
    }

    pub fn parse(name: &str) -> Option<SurvivalKind> {
        SurvivalKind::ALL.iter().copied().find(|k| k.name() == name)
    }
}

/// A survival model choice plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SurvivalConfig {
    CoxNet {
        alpha: f64,
        r: f64,
    },
    Rsf {
        n_estimators: usize,
        min_samples_leaf: usize,
        min_samples_split: usize,
        max_depth: usize,
        seed: u64,
    },
    XgbCox {
        learning_rate: f64,
        n_estimators: usize,
        min_samples_leaf: usize,
        min_samples_split: usize,
        max_depth: usize,
        seed: u64,
    },
}

impl SurvivalConfig {
    pub fn kind(&self) -> SurvivalKind {
        match self {
            SurvivalConfig::CoxNet { .. } => SurvivalKind::CoxNet,
            SurvivalConfig::Rsf { .. } => SurvivalKind::Rsf,
            SurvivalConfig::XgbCox { .. } => SurvivalKind::XgbCox,
        }
    }

    pub fn fit(&self, ds: &SurvivalDataset) -> Result<FittedSurvivalModel> {
        let state = match *self {
            SurvivalConfig::CoxNet { alpha, r } => {
                SurvivalState::CoxNet(cox::fit_coxnet(ds, alpha, r)?)
            }
            SurvivalConfig::Rsf {
                n_estimators,
                min_samples_leaf,
                min_samples_split,
                max_depth,
                seed,
            } => SurvivalState::Rsf(rsf::fit(
                ds,
                RsfParams {
                    n_estimators,
                    min_samples_leaf,
                    min_samples_split,
                    max_depth,
                    seed,
                },
            )?),
            SurvivalConfig::XgbCox {
                learning_rate,
                n_estimators,
                min_samples_leaf,
                min_samples_split,
                max_depth,
                seed,
            } => SurvivalState::XgbCox(xgb::fit(
                ds,
                XgbParams {
                    learning_rate,
                    n_estimators,
                    min_samples_leaf,
                    min_samples_split,
                    max_depth,
                    seed,
                },
            )?),
        };
        Ok(FittedSurvivalModel {
            config: self.clone(),
            event_definition: ds.event_definition,
            n_features: ds.n_features(),
            feature_names: ds.feature_names.clone(),
            state,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SurvivalState {
    CoxNet(CoxNetModel),
    Rsf(RsfModel),
    XgbCox(XgbCoxModel),
}

/// An immutable fitted survival model. Higher predicted risk means the
/// event is expected earlier, under either event definition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedSurvivalModel {
    config: SurvivalConfig,
    event_definition: EventDefinition,
    n_features: usize,
    feature_names: Vec<String>,
    state: SurvivalState,
}

impl FittedSurvivalModel {
    pub fn kind(&self) -> SurvivalKind {
        self.config.kind()
    }

    pub fn config(&self) -> &SurvivalConfig {
        &self.config
    }

    pub fn event_definition(&self) -> EventDefinition {
        self.event_definition
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn state(&self) -> &SurvivalState {
        &self.state
    }

    /// False only for a CoxNet fit that hit its iteration cap.
    pub fn converged(&self) -> bool {
        match &self.state {
            SurvivalState::CoxNet(m) => m.converged,
            _ => true,
        }
    }

    pub fn predict_risk(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::ShapeMismatch {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let risks = match &self.state {
            SurvivalState::CoxNet(m) => m.linear_predictor(x),
            SurvivalState::Rsf(m) => x
                .rows()
                .into_iter()
                .map(|row| m.predict_row(row.as_slice().expect("contiguous row")))
                .collect(),
            SurvivalState::XgbCox(m) => x
                .rows()
                .into_iter()
                .map(|row| m.predict_row(row.as_slice().expect("contiguous row")))
                .collect(),
        };
        debug_assert!(risks.iter().all(|r| r.is_finite()));
        Ok(risks)
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<FittedSurvivalModel> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Harrell's concordance index with exact pair counting.
///
/// Comparable pairs are `(i, j)` with `event[i]` and `time[i] < time[j]`;
/// a pair is concordant when the earlier-event subject has the higher
/// risk, and risk ties count one half. Counting uses a Fenwick tree over
/// rank-compressed risks, so the result equals brute-force pair
/// enumeration exactly.
pub fn c_index(time: &[f64], event: &[bool], risk: &[f64]) -> Result<f64> {
    assert!(time.len() == event.len() && event.len() == risk.len());
    let n = time.len();

    // Rank-compress risks.
    let mut sorted_risks: Vec<f64> = risk.to_vec();
    sorted_risks.sort_by(|a, b| a.partial_cmp(b).expect("finite risks"));
    sorted_risks.dedup();
    let rank_of = |r: f64| sorted_risks.partition_point(|&x| x < r);

    // Process subjects by descending time; subjects already inserted have
    // strictly later times than the current group.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| time[b].partial_cmp(&time[a]).expect("finite times"));

    let mut fenwick = Fenwick::new(sorted_risks.len());
    let mut inserted = 0u64;
    let mut concordant = 0u64;
    let mut tied = 0u64;
    let mut comparable = 0u64;

    let mut pos = 0;
    while pos < n {
        let t = time[order[pos]];
        let mut end = pos;
        while end < n && time[order[end]] == t {
            end += 1;
        }
        for &i in &order[pos..end] {
            if event[i] {
                let r = rank_of(risk[i]);
                let below = fenwick.prefix(r); // risk_j < risk_i
                let at_or_below = fenwick.prefix(r + 1);
                concordant += below;
                tied += at_or_below - below;
                comparable += inserted;
            }
        }
        for &i in &order[pos..end] {
            fenwick.add(rank_of(risk[i]));
            inserted += 1;
        }
        pos = end;
    }

    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok((2 * concordant + tied) as f64 / (2 * comparable) as f64)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Fenwick {
        Fenwick {
            tree: vec![0; n + 1],
        }
    }

    fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted values with rank < idx.
    fn prefix(&self, idx: usize) -> u64 {
        let mut i = idx.min(self.tree.len() - 1);
        let mut sum = 0;
        while i > 0 {
            sum += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        sum
    }
}

/// Cross-validation outcome: the mean held-out concordance plus per-fold
/// detail for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvResult {
    pub mean: f64,
    /// One entry per fold; `None` marks a skipped fold (no events or no
    /// comparable pairs).
    pub fold_scores: Vec<Option<f64>>,
    pub skipped: usize,
}

/// Seeded k-fold cross-validated concordance index.
pub fn cv_c_index(
    ds: &SurvivalDataset,
    config: &SurvivalConfig,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if folds < 2 {
        return Err(Error::Parameter("folds must be >= 2".to_string()));
    }
    let targets = ds.targets()?;
    let n = ds.n_rows();
    if n < folds {
        return Err(Error::Parameter(format!(
            "cannot make {folds} folds from {n} rows"
        )));
    }
    let mut shuffled: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let mut fold_of = vec![0usize; n];
    for (i, &row) in shuffled.iter().enumerate() {
        fold_of[row] = i % folds;
    }

    // Folds are independent; run them in parallel and collect in fold
    // order so the result is identical to a serial run.
    let fold_results: Vec<std::result::Result<f64, Error>> = (0..folds)
        .into_par_iter()
        .map(|k| {
            let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != k).collect();
            let held_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == k).collect();
            let sub = subset(ds, &train_rows);
            config.fit(&sub).and_then(|model| {
                let held_x = select_rows(&ds.x, &held_rows);
                let risk = model.predict_risk(&held_x)?;
                let t: Vec<f64> = held_rows.iter().map(|&i| targets.time[i]).collect();
                let e: Vec<bool> = held_rows.iter().map(|&i| targets.event[i]).collect();
                c_index(&t, &e, &risk)
            })
        })
        .collect();
    let mut fold_scores = Vec::with_capacity(folds);
    let mut skipped = 0;
    for result in fold_results {
        match result {
            Ok(score) => fold_scores.push(Some(score)),
            Err(Error::NoEvents) | Err(Error::NoComparablePairs) => {
                fold_scores.push(None);
                skipped += 1;
            }
            Err(other) => return Err(other),
        }
    }

    let kept: Vec<f64> = fold_scores.iter().filter_map(|s| *s).collect();
    if kept.is_empty() {
        return Err(Error::NoEvents);
    }
    Ok(CvResult {
        mean: kept.iter().sum::<f64>() / kept.len() as f64,
        fold_scores,
        skipped,
    })
}

/// CV report as delimited text: one row per fold plus the mean. Skipped
/// folds show `skipped` in place of a score.
pub fn write_cv_report<W: std::io::Write>(result: &CvResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "c_index"])?;
    for (fold, score) in result.fold_scores.iter().enumerate() {
        let value = match score {
            Some(s) => format!("{s}"),
            None => "skipped".to_string(),
        };
        w.write_record([fold.to_string(), value])?;
    }
    w.write_record(["mean".to_string(), format!("{}", result.mean)])?;
    w.flush()?;
    Ok(())
}

fn select_rows(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), x.ncols()));
    for (r, &i) in rows.iter().enumerate() {
        out.row_mut(r).assign(&x.row(i));
    }
    out
}

/// Row subset of a dataset, keeping targets aligned.
pub fn subset(ds: &SurvivalDataset, rows: &[usize]) -> SurvivalDataset {
    let x = select_rows(&ds.x, rows);
    let targets = ds.targets.as_ref().map(|t| SurvivalTargets {
        time: rows.iter().map(|&i| t.time[i]).collect(),
        event: rows.iter().map(|&i| t.event[i]).collect(),
    });
    SurvivalDataset {
        rows: rows.iter().map(|&i| ds.rows[i]).collect(),
        x,
        targets,
        event_definition: ds.event_definition,
        feature_names: ds.feature_names.clone(),
    }
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::Rng;

    /// Dataset straight from raw arrays; rows are synthetic pairs.
    pub fn dataset_from_parts(x: Array2<f64>, time: Vec<f64>, event: Vec<bool>) -> SurvivalDataset {
        let n = x.nrows();
        let feature_names = (0..x.ncols()).map(|j| format!("f{j}")).collect();
        SurvivalDataset {
            rows: (0..n).map(|i| (i, 0)).collect(),
            x,
            targets: Some(SurvivalTargets { time, event }),
            event_definition: EventDefinition::DropoutIsEvent,
            feature_names,
        }
    }

    /// Proportional-hazards simulation: exponential event times with rate
    /// `exp(x . beta)`, administrative censoring at a time quantile.
    pub fn simulate_ph(n: usize, beta: &[f64], censor_fraction: f64, seed: u64) -> SurvivalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.len();
        let mut x = Array2::zeros((n, p));
        let mut time = Vec::with_capacity(n);
        for i in 0..n {
            let mut eta = 0.0;
            for j in 0..p {
                let v: f64 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                x[[i, j]] = v;
                eta += v * beta[j];
            }
            let u: f64 = rng.random();
            time.push(-u.ln() / eta.exp());
        }
        let mut sorted = time.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cutoff = sorted[((n as f64) * (1.0 - censor_fraction)) as usize - 1];
        let mut event = Vec::with_capacity(n);
        for t in time.iter_mut() {
            if *t > cutoff {
                *t = cutoff;
                event.push(false);
            } else {
                event.push(true);
            }
        }
        dataset_from_parts(x, time, event)
    }
}
