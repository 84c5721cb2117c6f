//! Supervised clustering of local coefficients.
//!
//! Instances are grouped by spectral clustering of their local coefficient
//! rows; each cluster then gets one stepwise OLS model of the black-box
//! predictions, and the cluster count is chosen by the size-weighted adjusted R².

mod kmeans;
mod spectral;

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::locreg::{forward_stepwise, LinearFit, StepwiseConfig};
use crate::varimp::{CoefficientMatrix, LocalExplanation};

pub use spectral::SpectralEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Cluster on the intercept column as well as the slopes.
    pub include_intercept: bool,
    /// Scale each coefficient column to unit standard deviation first.
    pub standardize: bool,
    pub restarts: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            include_intercept: false,
            standardize: false,
            restarts: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSolution {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub fits: Vec<LinearFit>,
    pub sizes: Vec<usize>,
    pub r2: Vec<f64>,
    /// Clusters too small for the adjustment, reported with plain R².
    pub unadjusted: Vec<bool>,
    pub weighted_r2: f64,
    /// Empty clusters reseeded during clustering.
    pub repairs: usize,
}

/// Rows fed to the spectral step.
pub fn clustering_rows(b: &CoefficientMatrix, options: &SpectralOptions) -> Array2<f64> {
    let mut rows = if options.include_intercept { b.0.clone() } else { b.slopes() };
    if options.standardize {
        for mut col in rows.columns_mut() {
            let mean = col.mean().unwrap_or(0.0);
            let sd = col.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0).sqrt();
            if sd > 0.0 {
                col.mapv_inplace(|v| (v - mean) / sd);
            }
        }
    }
    rows
}

/// Spectral clustering of the coefficient rows into `k` groups; returns the
/// assignment and the number of empty-cluster repairs.
pub fn spectral_cluster(b: &CoefficientMatrix, k: usize, seed: u64, options: &SpectralOptions) -> Result<(Vec<usize>, usize)> {
    let n = b.0.nrows();
    check_k(k, n)?;
    if k == 1 {
        return Ok((vec![0; n], 0));
    }
    let embedding = SpectralEmbedding::new(&clustering_rows(b, options));
    Ok(embedding.cluster(k, options.restarts, seed))
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid("k", format!("cluster count must lie in 1..={n}, got {k}")));
    }
    Ok(())
}

/// Adjusted R² of one cluster, or plain R² when the cluster has no more
/// members than the feature cap (second value `true`).
pub fn cluster_r2(f: &[f64], g: &[f64], max_features: usize) -> (f64, bool) {
    let size = f.len();
    let mean = f.iter().sum::<f64>() / size as f64;
    let sse: f64 = f.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum();
    let sst: f64 = f.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return (if sse == 0.0 { 1.0 } else { f64::NEG_INFINITY }, false);
    }
    if size <= max_features {
        return (1.0 - sse / sst, true);
    }
    let adj = ((size - 1) as f64 * sse) / ((size - max_features) as f64 * sst);
    (1.0 - adj, false)
}

/// Fits one unweighted stepwise model per cluster of `table`.
pub fn fit_clusters(table: &DataTable, assignment: &[usize], k: usize, stepwise: &StepwiseConfig) -> Result<ClusterSolution> {
    let n = table.n();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch {
            context: "cluster assignment",
            expected: n,
            actual: assignment.len(),
        });
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in assignment.iter().enumerate() {
        if a >= k {
            return Err(Error::IndexOutOfRange { index: a, len: k });
        }
        members[a].push(i);
    }
    if let Some(l) = members.iter().position(Vec::is_empty) {
        return Err(Error::invalid("assignment", format!("cluster {l} is empty")));
    }
    let mut fits = Vec::with_capacity(k);
    let mut r2 = Vec::with_capacity(k);
    let mut unadjusted = Vec::with_capacity(k);
    for rows in &members {
        let x = table.features().select(Axis(0), rows);
        let f = table.target().select(Axis(0), rows);
        let w = Array1::from_elem(rows.len(), 1.0 / rows.len() as f64);
        let cap = StepwiseConfig {
            max_features: stepwise.max_features.min(table.d()),
            ..*stepwise
        };
        let fit = forward_stepwise(&x, f.view(), w.view(), &cap)?;
        let g: Vec<f64> = x.rows().into_iter().map(|r| fit.predict(r.as_slice().unwrap())).collect();
        let (r, flagged) = cluster_r2(f.as_slice().unwrap(), &g, stepwise.max_features);
        if flagged {
            log::warn!("cluster of size {} is too small for adjusted R²", rows.len());
        }
        fits.push(fit);
        r2.push(r);
        unadjusted.push(flagged);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let weighted_r2 = sizes.iter().zip(&r2).map(|(&s, r)| s as f64 * r).sum::<f64>() / n as f64;
    Ok(ClusterSolution {
        k,
        assignment: assignment.to_vec(),
        fits,
        sizes,
        r2,
        unadjusted,
        weighted_r2,
        repairs: 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best: ClusterSolution,
    /// Every evaluated solution in the order of the requested range.
    pub candidates: Vec<ClusterSolution>,
}

impl KSelection {
    pub fn r2_by_k(&self) -> Vec<(usize, f64)> {
        self.candidates.iter().map(|c| (c.k, c.weighted_r2)).collect()
    }
}

/// Clusters for every `k` in `k_range` and keeps the largest weighted R²
/// (smaller `k` on ties).
pub fn select_k(
    table: &DataTable,
    b: &CoefficientMatrix,
    stepwise: &StepwiseConfig,
    k_range: &[usize],
    seed: u64,
    options: &SpectralOptions,
) -> Result<KSelection> {
    if k_range.is_empty() {
        return Err(Error::invalid("k_range", "at least one cluster count is required"));
    }
    let n = table.n();
    if b.0.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "coefficient matrix rows",
            expected: n,
            actual: b.0.nrows(),
        });
    }
    for &k in k_range {
        check_k(k, n)?;
    }
    let embedding = k_range
        .iter()
        .any(|&k| k > 1)
        .then(|| SpectralEmbedding::new(&clustering_rows(b, options)));
    let candidates = k_range
        .par_iter()
        .map(|&k| {
            let (assignment, repairs) = match &embedding {
                Some(e) => e.cluster(k, options.restarts, seed),
                None => (vec![0; n], 0),
            };
            let mut sol = fit_clusters(table, &assignment, k, stepwise)?;
            sol.repairs = repairs;
            Ok(sol)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (c, sol) in candidates.iter().enumerate() {
        let cur = &candidates[best];
        if sol.weighted_r2 > cur.weighted_r2 || (sol.weighted_r2 == cur.weighted_r2 && sol.k < cur.k) {
            best = c;
        }
    }
    Ok(KSelection {
        best: candidates[best].clone(),
        candidates,
    })
}

/// Explanation of instance `i` by the model of its cluster.
pub fn explain_instance(solution: &ClusterSolution, table: &DataTable, i: usize) -> Result<LocalExplanation> {
    let &l = solution
        .assignment
        .get(i)
        .ok_or(Error::IndexOutOfRange {
            index: i,
            len: solution.assignment.len(),
        })?;
    let fit = &solution.fits[l];
    let x = table.row(i).to_vec();
    Ok(LocalExplanation::from_fit(i, fit, &x, table.target()[i]))
}

pub fn explain_all(solution: &ClusterSolution, table: &DataTable) -> Result<Vec<LocalExplanation>> {
    (0..table.n()).map(|i| explain_instance(solution, table, i)).collect()
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    let mut rows: HashMap<usize, f64> = HashMap::new();
    let mut cols: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// JSON export: k, per-cluster coefficient tables, sizes, R², weighted R², assignment.
pub fn solution_json(solution: &ClusterSolution, feature_names: &[String]) -> serde_json::Value {
    let clusters: Vec<serde_json::Value> = solution
        .fits
        .iter()
        .enumerate()
        .map(|(l, fit)| {
            let coefs: serde_json::Map<String, serde_json::Value> = feature_names
                .iter()
                .zip(fit.coefficients.iter())
                .map(|(n, &c)| (n.clone(), serde_json::json!(c)))
                .collect();
            serde_json::json!({
                "cluster": l,
                "size": solution.sizes[l],
                "intercept": fit.intercept,
                "coefficients": coefs,
                "r2": solution.r2[l],
                "unadjusted": solution.unadjusted[l],
            })
        })
        .collect();
    serde_json::json!({
        "k": solution.k,
        "weighted_r2": solution.weighted_r2,
        "sizes": solution.sizes,
        "clusters": clusters,
        "assignment": solution.assignment,
        "repairs": solution.repairs,
    })
}
