//! Arena-allocated binary trees shared by the survival forest and the
//! boosted Cox model. Rows go left when `x[feature] <= threshold`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node<L> {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(L),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree<L> {
    pub nodes: Vec<Node<L>>,
}

impl<L> Tree<L> {
    pub fn leaf_for(&self, row: &[f64]) -> &L {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf(payload) => return payload,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }
}

/// Up to `max_thresholds` candidate thresholds over the given values:
/// distinct sorted values at evenly spaced positions, excluding the
/// maximum (a split at the max puts nothing on the right).
pub fn candidate_thresholds(values: &mut Vec<f64>, max_thresholds: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite feature values"));
    values.dedup();
    if values.len() < 2 {
        return Vec::new();
    }
    let usable = &values[..values.len() - 1];
    if usable.len() <= max_thresholds {
        return usable.to_vec();
    }
    (0..max_thresholds)
        .map(|k| {
            let pos = (k * (usable.len() - 1)) / (max_thresholds - 1).max(1);
            usable[pos]
        })
        .collect()
}
