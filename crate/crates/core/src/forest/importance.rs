use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{tree_rng, Forest};
use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::model::Predictor;

/// Per-instance permutation importances and their row-normalized weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatrix {
    pub raw: Array2<f64>,
    pub normalized: Array2<f64>,
    /// Rows that were in-bag for every tree and fell back to uniform weights.
    pub uncovered: Vec<usize>,
}

impl ImportanceMatrix {
    /// Every instance weighs every feature equally.
    pub fn uniform(n: usize, d: usize) -> Self {
        Self {
            raw: Array2::zeros((n, d)),
            normalized: Array2::from_elem((n, d), 1.0 / d as f64),
            uncovered: Vec::new(),
        }
    }

    /// Normalizes raw importances: negatives clamp to zero, all-zero rows become uniform.
    pub fn from_raw(raw: Array2<f64>) -> Self {
        let d = raw.ncols();
        let mut normalized = raw.mapv(|v| v.max(0.0));
        for mut row in normalized.rows_mut() {
            let total: f64 = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            } else {
                row.fill(1.0 / d as f64);
            }
        }
        Self {
            raw,
            normalized,
            uncovered: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    pub fn d(&self) -> usize {
        self.raw.ncols()
    }
}

/// Out-of-bag local importance of every feature for every row of `table`,
/// which must be the data the forest was trained on.
///
/// For each tree, the out-of-bag values of each feature are shuffled once and
/// the change in squared error of every out-of-bag row is recorded; `raw[i][j]`
/// is the mean change over the trees where row `i` is out of bag.
pub fn local_importance(forest: &Forest, table: &DataTable, seed: u64) -> Result<ImportanceMatrix> {
    let (n, d) = (table.n(), table.d());
    if d != forest.n_features() {
        return Err(Error::DimensionMismatch {
            context: "importance table features",
            expected: forest.n_features(),
            actual: d,
        });
    }
    if n != forest.n_train() {
        return Err(Error::DimensionMismatch {
            context: "importance table rows vs forest training rows",
            expected: forest.n_train(),
            actual: n,
        });
    }
    let x = table.features();
    let y = table.target();

    let per_tree: Vec<(Vec<usize>, Vec<f64>)> = forest
        .trees()
        .par_iter()
        .enumerate()
        .map(|(t, tree)| {
            let oob: Vec<usize> = forest
                .out_of_bag(t)
                .iter()
                .enumerate()
                .filter_map(|(i, &o)| o.then_some(i))
                .collect();
            let mut rng = tree_rng(seed, t);
            let mut diffs = vec![0.0; oob.len() * d];
            let mut row = vec![0.0; d];
            let base: Vec<f64> = oob
                .iter()
                .map(|&i| {
                    row.iter_mut().zip(x.row(i)).for_each(|(r, v)| *r = *v);
                    (tree.predict(&row) - y[i]).powi(2)
                })
                .collect();
            for j in 0..d {
                let mut perm = oob.clone();
                perm.shuffle(&mut rng);
                for (k, (&i, &p)) in oob.iter().zip(&perm).enumerate() {
                    row.iter_mut().zip(x.row(i)).for_each(|(r, v)| *r = *v);
                    row[j] = x[[p, j]];
                    let err = (tree.predict(&row) - y[i]).powi(2);
                    diffs[k * d + j] = err - base[k];
                }
            }
            (oob, diffs)
        })
        .collect();

    let mut sums = Array2::<f64>::zeros((n, d));
    let mut counts = vec![0usize; n];
    for (oob, diffs) in &per_tree {
        for (k, &i) in oob.iter().enumerate() {
            counts[i] += 1;
            for j in 0..d {
                sums[[i, j]] += diffs[k * d + j];
            }
        }
    }
    let mut uncovered = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            uncovered.push(i);
        } else {
            sums.row_mut(i).mapv_inplace(|v| v / c as f64);
        }
    }
    if !uncovered.is_empty() {
        log::warn!(
            "{} instances were in-bag for every tree; using uniform importance for them",
            uncovered.len()
        );
    }
    let mut m = ImportanceMatrix::from_raw(sums);
    m.uncovered = uncovered;
    Ok(m)
}
