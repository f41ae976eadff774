//! Gradient-boosted Cox model: stagewise regression trees fitted to the
//! partial-likelihood gradient, `f(x) = sum_b nu * tree_b(x)`.
//!
//! Trees split on histogram bins (global per-feature quantiles), which is
//! deterministic and keeps node scans linear. No row or feature
//! subsampling is used, so fits are reproducible independent of the seed
//! and thread count.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SurvivalDataset;
use crate::survival::cox::PartialLikelihood;
use crate::survival::tree::{Node, Tree, candidate_thresholds};

const N_BINS: usize = 32;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct XgbParams {
    pub learning_rate: f64,
    pub n_estimators: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
    pub max_depth: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XgbCoxModel {
    pub params: XgbParams,
    pub trees: Vec<Tree<f64>>,
    /// `-LL` before boosting and after each stage.
    pub objective_trace: Vec<f64>,
}

impl XgbCoxModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.params.learning_rate * self.trees.iter().map(|t| *t.leaf_for(row)).sum::<f64>()
    }
}

pub(super) fn fit(ds: &SurvivalDataset, params: XgbParams) -> Result<XgbCoxModel> {
    if !params.learning_rate.is_finite()
        || params.learning_rate <= 0.0
        || params.learning_rate > 1.0
    {
        return Err(Error::Parameter(
            "learning_rate must be in (0, 1]".to_string(),
        ));
    }
    if params.min_samples_leaf < 1 || params.min_samples_split < 2 {
        return Err(Error::Parameter(
            "min_samples_leaf must be >= 1 and min_samples_split >= 2".to_string(),
        ));
    }
    let pl = PartialLikelihood::from_dataset(ds)?;
    let n = ds.n_rows();

    // Global per-feature candidate thresholds and per-row bin codes.
    // Row i goes left of threshold t of feature f iff bins[f][i] <= t.
    let p = ds.n_features();
    let mut thresholds: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut bins: Vec<Vec<u8>> = Vec::with_capacity(p);
    for f in 0..p {
        let mut values: Vec<f64> = ds.x.column(f).to_vec();
        let edges = candidate_thresholds(&mut values, N_BINS);
        let codes =
            ds.x.column(f)
                .iter()
                .map(|&v| edges.partition_point(|&e| e < v) as u8)
                .collect();
        thresholds.push(edges);
        bins.push(codes);
    }

    let mut f_values = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut objective_trace = vec![-pl.loglik(&f_values)];

    for _ in 0..params.n_estimators {
        let residuals = pl.gradient(&f_values);
        let grower = Grower {
            x: &ds.x,
            bins: &bins,
            thresholds: &thresholds,
            targets: &residuals,
            params: &params,
        };
        let tree = grower.grow_tree();
        for (i, f) in f_values.iter_mut().enumerate() {
            let row = ds.x.row(i);
            *f += params.learning_rate * tree.leaf_for(row.as_slice().expect("contiguous row"));
        }
        objective_trace.push(-pl.loglik(&f_values));
        trees.push(tree);
    }

    Ok(XgbCoxModel {
        params,
        trees,
        objective_trace,
    })
}

struct Grower<'a> {
    x: &'a Array2<f64>,
    bins: &'a [Vec<u8>],
    thresholds: &'a [Vec<f64>],
    targets: &'a [f64],
    params: &'a XgbParams,
}

impl Grower<'_> {
    fn grow_tree(&self) -> Tree<f64> {
        let mut nodes = Vec::new();
        let samples: Vec<usize> = (0..self.targets.len()).collect();
        self.grow_node(samples, 0, &mut nodes);
        Tree { nodes }
    }

    fn grow_node(&self, samples: Vec<usize>, depth: usize, nodes: &mut Vec<Node<f64>>) -> usize {
        let n = samples.len();
        let sum: f64 = samples.iter().map(|&i| self.targets[i]).sum();
        if depth >= self.params.max_depth || n < self.params.min_samples_split {
            nodes.push(Node::Leaf(sum / n as f64));
            return nodes.len() - 1;
        }

        // One histogram pass per feature, then a prefix scan over bins.
        // Score to maximize is sum_L^2/n_L + sum_R^2/n_R.
        let mut best: Option<(f64, usize, f64)> = None;
        let base_score = sum * sum / n as f64;
        for (f, edges) in self.thresholds.iter().enumerate() {
            if edges.is_empty() {
                continue;
            }
            let mut hist_count = [0usize; N_BINS + 1];
            let mut hist_sum = [0.0f64; N_BINS + 1];
            let codes = &self.bins[f];
            for &i in &samples {
                let b = codes[i] as usize;
                hist_count[b] += 1;
                hist_sum[b] += self.targets[i];
            }
            let mut n_left = 0usize;
            let mut sum_left = 0.0;
            for (t, &threshold) in edges.iter().enumerate() {
                n_left += hist_count[t];
                sum_left += hist_sum[t];
                let n_right = n - n_left;
                if n_left < self.params.min_samples_leaf || n_right < self.params.min_samples_leaf {
                    continue;
                }
                let score = sum_left * sum_left / n_left as f64
                    + (sum - sum_left) * (sum - sum_left) / n_right as f64;
                if score > base_score + 1e-12 && best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            nodes.push(Node::Leaf(sum / n as f64));
            return nodes.len() - 1;
        };
        let (left_samples, right_samples): (Vec<usize>, Vec<usize>) = samples
            .into_iter()
            .partition(|&i| self.x[[i, feature]] <= threshold);
        let placeholder = nodes.len();
        nodes.push(Node::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow_node(left_samples, depth + 1, nodes);
        let right = self.grow_node(right_samples, depth + 1, nodes);
        let Node::Split {
            left: l, right: r, ..
        } = &mut nodes[placeholder]
        else {
            unreachable!()
        };
        *l = left;
        *r = right;
        placeholder
    }
}
