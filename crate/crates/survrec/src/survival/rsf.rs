//! Random survival forest: bootstrap trees split by the log-rank statistic,
//! Nelson-Aalen cumulative hazard in each leaf.
//!
//! A leaf's hazard estimate is `H(t) = sum_{t_j <= t} d_j / R_j` over the
//! leaf's event times. The scalar risk of a subject is the ensemble-mean
//! cumulative hazard summed over the training event-time grid.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SurvivalDataset;
use crate::survival::tree::{Node, Tree, candidate_thresholds};

const MAX_THRESHOLDS: usize = 32;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RsfParams {
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_depth: usize,
    pub seed: u64,
}

/// Step function `H(t)` stored as parallel arrays plus its precomputed sum
/// over the training event-time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChfLeaf {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub grid_sum: f64,
}

impl ChfLeaf {
    pub fn chf_at(&self, t: f64) -> f64 {
        // Last value whose time is <= t.
        match self.times.partition_point(|&x| x <= t) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RsfModel {
    pub params: RsfParams,
    pub trees: Vec<Tree<ChfLeaf>>,
    /// Distinct training event times; the evaluation grid for risk scores.
    pub event_time_grid: Vec<f64>,
}

impl RsfModel {
    /// Risk from one tree: the leaf's cumulative hazard summed over the
    /// training event-time grid.
    pub fn tree_risk(&self, tree: usize, row: &[f64]) -> f64 {
        self.trees[tree].leaf_for(row).grid_sum
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let total: f64 = (0..self.trees.len()).map(|b| self.tree_risk(b, row)).sum();
        total / self.trees.len() as f64
    }
}

/// Nelson-Aalen estimator over `(time, event)` pairs: at each distinct
/// event time, add `d / R` where `R` counts subjects still at risk.
pub fn nelson_aalen(time: &[f64], event: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[a].partial_cmp(&time[b]).expect("finite times"));
    let n = order.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut cumulative = 0.0;
    let mut pos = 0;
    while pos < n {
        let t = time[order[pos]];
        let at_risk = n - pos;
        let mut d = 0usize;
        let mut end = pos;
        while end < n && time[order[end]] == t {
            if event[order[end]] {
                d += 1;
            }
            end += 1;
        }
        if d > 0 {
            cumulative += d as f64 / at_risk as f64;
            times.push(t);
            values.push(cumulative);
        }
        pos = end;
    }
    (times, values)
}

/// Two-sample log-rank statistic. `in_left` flags each subject's side;
/// subjects are visited in ascending-time order via `asc_order`.
fn log_rank_statistic(time: &[f64], event: &[bool], asc_order: &[usize], in_left: &[bool]) -> f64 {
    let n = asc_order.len();
    let mut at_risk_left = in_left.iter().filter(|&&l| l).count();
    let mut at_risk_total = n;
    let mut observed_minus_expected = 0.0;
    let mut variance = 0.0;
    let mut pos = 0;
    while pos < n {
        let t = time[asc_order[pos]];
        let mut d_total = 0usize;
        let mut d_left = 0usize;
        let mut leaving_left = 0usize;
        let mut end = pos;
        while end < n && time[asc_order[end]] == t {
            let idx = asc_order[end];
            if event[idx] {
                d_total += 1;
                if in_left[end] {
                    d_left += 1;
                }
            }
            if in_left[end] {
                leaving_left += 1;
            }
            end += 1;
        }
        if d_total > 0 && at_risk_total > 1 {
            let y = at_risk_total as f64;
            let y_left = at_risk_left as f64;
            let d = d_total as f64;
            observed_minus_expected += d_left as f64 - y_left * d / y;
            variance += (y_left / y) * (1.0 - y_left / y) * ((y - d) / (y - 1.0)) * d;
        }
        at_risk_total -= end - pos;
        at_risk_left -= leaving_left;
        pos = end;
    }
    if variance <= 0.0 {
        0.0
    } else {
        observed_minus_expected.abs() / variance.sqrt()
    }
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    time: &'a [f64],
    event: &'a [bool],
    params: RsfParams,
    mtry: usize,
    grid: &'a [f64],
    nodes: Vec<Node<ChfLeaf>>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, samples: &[usize]) -> usize {
        let times: Vec<f64> = samples.iter().map(|&i| self.time[i]).collect();
        let events: Vec<bool> = samples.iter().map(|&i| self.event[i]).collect();
        let (t, v) = nelson_aalen(&times, &events);
        let leaf = ChfLeaf {
            grid_sum: {
                let chf = ChfLeaf {
                    times: t.clone(),
                    values: v.clone(),
                    grid_sum: 0.0,
                };
                self.grid.iter().map(|&g| chf.chf_at(g)).sum()
            },
            times: t,
            values: v,
        };
        self.nodes.push(Node::Leaf(leaf));
        self.nodes.len() - 1
    }

    fn grow(&mut self, samples: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let n = samples.len();
        let no_events = samples.iter().all(|&i| !self.event[i]);
        if depth >= self.params.max_depth || n < self.params.min_samples_split || no_events {
            return self.leaf(&samples);
        }

        // Evaluate log-rank over mtry sampled features and quantile
        // thresholds of the node's values.
        let p = self.x.ncols();
        let features = sample_distinct(rng, p, self.mtry);
        let mut asc_order: Vec<usize> = samples.clone();
        asc_order.sort_by(|&a, &b| {
            self.time[a]
                .partial_cmp(&self.time[b])
                .expect("finite times")
                .then(a.cmp(&b))
        });

        let mut best: Option<(f64, usize, f64)> = None; // (stat, feature, threshold)
        for &f in &features {
            let mut values: Vec<f64> = samples.iter().map(|&i| self.x[[i, f]]).collect();
            for threshold in candidate_thresholds(&mut values, MAX_THRESHOLDS) {
                let in_left: Vec<bool> = asc_order
                    .iter()
                    .map(|&i| self.x[[i, f]] <= threshold)
                    .collect();
                let n_left = in_left.iter().filter(|&&l| l).count();
                if n_left < self.params.min_samples_leaf
                    || n - n_left < self.params.min_samples_leaf
                {
                    continue;
                }
                let stat = log_rank_statistic(self.time, self.event, &asc_order, &in_left);
                let better = match best {
                    None => stat > 0.0,
                    Some((best_stat, _, _)) => stat > best_stat,
                };
                if better {
                    best = Some((stat, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.leaf(&samples);
        };
        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.x[[i, feature]] <= threshold);

        let placeholder = self.nodes.len();
        self.nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(left_samples, depth + 1, rng);
        let right = self.grow(right_samples, depth + 1, rng);
        let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[placeholder]
        else {
            unreachable!()
        };
        *l = left;
        *r = right;
        placeholder
    }
}

/// `count` distinct indices out of `0..p`, in sorted order.
fn sample_distinct(rng: &mut ChaCha8Rng, p: usize, count: usize) -> Vec<usize> {
    let count = count.min(p);
    let mut pool: Vec<usize> = (0..p).collect();
    // partial Fisher-Yates
    for k in 0..count {
        let j = rng.random_range(k..p);
        pool.swap(k, j);
    }
    let mut chosen = pool[..count].to_vec();
    chosen.sort_unstable();
    chosen
}

pub(super) fn fit(ds: &SurvivalDataset, params: RsfParams) -> Result<RsfModel> {
    fit_with_options(ds, params, true)
}

/// `bootstrap = false` grows every tree on the full sample; used by tests
/// to pin leaf estimates against the training-set Nelson-Aalen curve.
pub(super) fn fit_with_options(
    ds: &SurvivalDataset,
    params: RsfParams,
    bootstrap: bool,
) -> Result<RsfModel> {
    if params.n_estimators < 1 {
        return Err(Error::Parameter("n_estimators must be >= 1".to_string()));
    }
    if params.min_samples_leaf < 1 || params.min_samples_split < 2 {
        return Err(Error::Parameter(
            "min_samples_leaf must be >= 1 and min_samples_split >= 2".to_string(),
        ));
    }
    let targets = ds.targets()?;
    let n = ds.n_rows();
    let p = ds.n_features();
    if !targets.event.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }

    // Grid of distinct training event times.
    let mut grid: Vec<f64> = targets
        .time
        .iter()
        .zip(targets.event.iter())
        .filter(|&(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    grid.dedup();

    let mtry = (p as f64).sqrt().ceil() as usize;
    let trees: Vec<Tree<ChfLeaf>> = (0..params.n_estimators)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(tree_seed(params.seed, b as u64));
            let samples: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                x: &ds.x,
                time: &targets.time,
                event: &targets.event,
                params,
                mtry,
                grid: &grid,
                nodes: Vec::new(),
            };
            builder.grow(samples, 0, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();

    Ok(RsfModel {
        params,
        trees,
        event_time_grid: grid,
    })
}

/// Per-tree seed derivation (splitmix64 over the master seed and index),
/// so parallel tree construction is deterministic regardless of scheduling.
fn tree_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
