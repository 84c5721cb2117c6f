//! Random-forest regression: the black-box model and the source of per-instance
//! out-of-bag permutation importance.

mod importance;
mod tree;

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::model::{check_dim, Predictor};

pub use importance::{local_importance, ImportanceMatrix};
pub use tree::{Node, Tree};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `max(d / 3, 1)`.
    pub mtry: Option<usize>,
    /// Nodes with at most this many rows become leaves.
    pub node_size: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            mtry: None,
            node_size: 5,
        }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, d: usize) -> usize {
        self.mtry.unwrap_or(d / 3).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format_version: u32,
    n_features: usize,
    params: ForestParams,
    trees: Vec<Tree>,
    /// Sorted bootstrap sample (with repeats) of training rows, per tree.
    bootstrap: Vec<Vec<usize>>,
    n_train: usize,
}

/// Per-tree RNG stream derived from the forest seed.
pub(crate) fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

pub fn train_forest(table: &DataTable, params: &ForestParams, seed: u64) -> Result<Forest> {
    let n = table.n();
    if n == 0 {
        return Err(Error::Empty("training table"));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("n_trees", "at least one tree is required"));
    }
    let d = table.d();
    let tree_params = tree::TreeParams {
        mtry: params.mtry_for(d),
        node_size: params.node_size.max(1),
    };
    let x = table.features();
    let y = table.target();
    let (trees, bootstrap): (Vec<Tree>, Vec<Vec<usize>>) = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            rows.sort_unstable();
            let tree = Tree::grow(x, y, &rows, &tree_params, &mut rng);
            (tree, rows)
        })
        .unzip();
    Ok(Forest {
        format_version: MODEL_FORMAT_VERSION,
        n_features: d,
        params: *params,
        trees,
        bootstrap,
        n_train: n,
    })
}

impl Forest {
    /// Assembles a forest from parts; every tree is treated as trained on
    /// `n_train` rows with the given bootstrap samples.
    pub fn from_parts(n_features: usize, trees: Vec<Tree>, bootstrap: Vec<Vec<usize>>, n_train: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Empty("forest trees"));
        }
        if trees.len() != bootstrap.len() {
            return Err(Error::DimensionMismatch {
                context: "bootstrap records vs trees",
                expected: trees.len(),
                actual: bootstrap.len(),
            });
        }
        Ok(Self {
            format_version: MODEL_FORMAT_VERSION,
            n_features,
            params: ForestParams {
                n_trees: trees.len(),
                ..ForestParams::default()
            },
            trees,
            bootstrap,
            n_train,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn bootstrap(&self) -> &[Vec<usize>] {
        &self.bootstrap
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    /// Out-of-bag mask of training rows for tree `t`.
    pub fn out_of_bag(&self, t: usize) -> Vec<bool> {
        let mut oob = vec![true; self.n_train];
        for &r in &self.bootstrap[t] {
            oob[r] = false;
        }
        oob
    }

    pub fn predict_table(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        check_dim(self.n_features, x.ncols())?;
        self.predict_rows(x)
    }

    pub fn save_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn load_json<R: Read>(reader: R) -> Result<Self> {
        let forest: Forest = serde_json::from_reader(reader)?;
        if forest.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelVersion {
                found: forest.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        Ok(forest)
    }
}

impl Predictor for Forest {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.n_features, x.len())?;
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use ndarray::array;

    fn small_params() -> ForestParams {
        ForestParams {
            n_trees: 50,
            ..ForestParams::default()
        }
    }

    #[test]
    fn constant_target_gives_constant_leaves() {
        let (t, _) = generate_synthetic(1, 60, 3, 1).unwrap();
        let t = t.with_target(Array1::from_elem(60, 2.5)).unwrap();
        let f = train_forest(&t, &small_params(), 0).unwrap();
        for tree in f.trees() {
            for node in tree.nodes() {
                match node {
                    Node::Leaf { value } => assert!((value - 2.5).abs() < 1e-12),
                    Node::Split { .. } => panic!("constant target must not split"),
                }
            }
        }
    }

    #[test]
    fn single_row_forest() {
        let t = DataTable::new(array![[0.3, 0.4]], array![7.0], vec!["a".into(), "b".into()]).unwrap();
        let f = train_forest(&t, &small_params(), 3).unwrap();
        assert_eq!(f.predict(&[0.9, 0.1]).unwrap(), 7.0);
    }

    #[test]
    fn fits_linear_signal() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
        let y = x.column(0).to_owned();
        let t = DataTable::new(x.clone(), y.clone(), vec!["x1".into()]).unwrap();
        let f = train_forest(&t, &small_params(), 5).unwrap();
        let pred = f.predict_table(&x).unwrap();
        let mse = (&pred - &y).mapv(|e| e * e).mean().unwrap();
        let mean = y.mean().unwrap();
        let var = y.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        assert!(mse < var, "mse {mse} var {var}");
        assert!(mse < 0.05 * var);
    }

    #[test]
    fn prediction_is_tree_mean() {
        let f = Forest::from_parts(1, vec![Tree::leaf(1.0), Tree::leaf(3.0)], vec![vec![0], vec![0]], 1).unwrap();
        assert_eq!(f.predict(&[0.0]).unwrap(), 2.0);
        let g = Forest::from_parts(1, vec![Tree::leaf(3.0), Tree::leaf(1.0)], vec![vec![0], vec![0]], 1).unwrap();
        assert_eq!(f.predict(&[0.4]).unwrap(), g.predict(&[0.4]).unwrap());
        assert!(matches!(f.predict(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn deterministic_and_serializable() {
        let (t, _) = generate_synthetic(2, 100, 4, 2).unwrap();
        let a = train_forest(&t, &small_params(), 11).unwrap();
        let b = train_forest(&t, &small_params(), 11).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.save_json(&mut buf).unwrap();
        let c = Forest::load_json(buf.as_slice()).unwrap();
        assert_eq!(a, c);
        for bs in a.bootstrap() {
            assert_eq!(bs.len(), 100);
        }
    }
}
