use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Binary CART regression tree; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

pub(crate) struct TreeParams {
    pub mtry: usize,
    pub node_size: usize,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Features used by at least one split.
    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    /// Grows a tree on the given (possibly repeated) row indices.
    pub(crate) fn grow<R: Rng>(
        x: &Array2<f64>,
        y: &Array1<f64>,
        rows: &[usize],
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        let mut tree = Tree { nodes: Vec::new() };
        let mut rows = rows.to_vec();
        let mut scratch = Vec::with_capacity(rows.len());
        tree.grow_node(x, y, &mut rows, params, rng, &mut scratch);
        tree
    }

    fn grow_node<R: Rng>(
        &mut self,
        x: &Array2<f64>,
        y: &Array1<f64>,
        rows: &mut [usize],
        params: &TreeParams,
        rng: &mut R,
        scratch: &mut Vec<(f64, f64)>,
    ) -> usize {
        let id = self.nodes.len();
        let n = rows.len();
        let sum: f64 = rows.iter().map(|&r| y[r]).sum();
        let mean = sum / n as f64;
        self.nodes.push(Node::Leaf { value: mean });

        if n <= params.node_size || rows.iter().all(|&r| y[r] == y[rows[0]]) {
            return id;
        }

        let d = x.ncols();
        let candidates = rand::seq::index::sample(rng, d, params.mtry.min(d));
        let parent_score = sum * sum / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for feature in candidates.iter() {
            scratch.clear();
            scratch.extend(rows.iter().map(|&r| (x[[r, feature]], y[r])));
            scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += scratch[k].1;
                if scratch[k].0 == scratch[k + 1].0 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let nr = (n - k - 1) as f64;
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
                if best.is_none_or(|(_, _, s)| score > s) {
                    let mut threshold = 0.5 * (scratch[k].0 + scratch[k + 1].0);
                    if threshold >= scratch[k + 1].0 {
                        threshold = scratch[k].0;
                    }
                    best = Some((feature, threshold, score));
                }
            }
        }

        let Some((feature, threshold, score)) = best else {
            return id;
        };
        if score - parent_score <= 1e-12 * parent_score.abs().max(1.0) {
            return id;
        }

        let mut split = 0;
        for k in 0..n {
            if x[[rows[k], feature]] <= threshold {
                rows.swap(k, split);
                split += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(split);
        let left = self.grow_node(x, y, left_rows, params, rng, scratch);
        let right = self.grow_node(x, y, right_rows, params, rng, scratch);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}
