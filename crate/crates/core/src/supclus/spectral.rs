use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use super::kmeans::{kmeans, repair_empty};

/// Eigen-decomposition of the normalized affinity of a set of rows, reusable
/// for every cluster count.
#[derive(Debug, Clone)]
pub struct SpectralEmbedding {
    /// Eigenvectors as columns, ordered by decreasing eigenvalue.
    vectors: Array2<f64>,
    pub eigenvalues: Vec<f64>,
    pub sigma: f64,
    rows: Array2<f64>,
    distinct: usize,
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if values.len() % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn count_distinct(rows: &Array2<f64>) -> usize {
    let mut keys: Vec<Vec<u64>> = rows
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

impl SpectralEmbedding {
    /// Gaussian affinity with the median pairwise distance as scale, zero
    /// diagonal, symmetric normalization `D^-1/2 A D^-1/2`.
    pub fn new(rows: &Array2<f64>) -> Self {
        let n = rows.nrows();
        let mut sq = vec![0.0; n * n];
        let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for p in 0..n {
            for q in p + 1..n {
                let d: f64 = rows
                    .row(p)
                    .iter()
                    .zip(rows.row(q))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                sq[p * n + q] = d;
                sq[q * n + p] = d;
                dists.push(d.sqrt());
            }
        }
        let mut sigma = median(dists);
        if !(sigma > 0.0) {
            sigma = 1.0;
        }
        let denom = 2.0 * sigma * sigma;
        let mut affinity = DMatrix::<f64>::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    affinity[(p, q)] = (-sq[p * n + q] / denom).exp();
                }
            }
        }
        let inv_sqrt_deg: Vec<f64> = (0..n)
            .map(|p| {
                let deg: f64 = affinity.row(p).sum();
                if deg > 0.0 {
                    deg.sqrt().recip()
                } else {
                    0.0
                }
            })
            .collect();
        for p in 0..n {
            for q in 0..n {
                affinity[(p, q)] *= inv_sqrt_deg[p] * inv_sqrt_deg[q];
            }
        }
        let eig = SymmetricEigen::new(affinity);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
        Self {
            vectors,
            eigenvalues: order.iter().map(|&c| eig.eigenvalues[c]).collect(),
            sigma,
            rows: rows.clone(),
            distinct: count_distinct(rows),
        }
    }

    /// Top-`k` eigenvectors with each row scaled to unit length.
    pub fn embed(&self, k: usize) -> Array2<f64> {
        let mut y = self.vectors.slice(ndarray::s![.., ..k]).to_owned();
        for mut row in y.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        y
    }

    /// Cluster assignment for `k` clusters and the number of empty-cluster repairs.
    pub fn cluster(&self, k: usize, restarts: usize, seed: u64) -> (Vec<usize>, usize) {
        let n = self.rows.nrows();
        if k <= 1 || n == 0 {
            return (vec![0; n], 0);
        }
        if self.distinct < k {
            return self.cluster_degenerate(k);
        }
        let r = kmeans(&self.embed(k), k, restarts, seed);
        (r.assignment, r.repairs)
    }

    /// Fewer distinct rows than clusters: identical rows share a cluster in
    /// order of first appearance, then empty clusters are repaired.
    fn cluster_degenerate(&self, k: usize) -> (Vec<usize>, usize) {
        let n = self.rows.nrows();
        let mut assignment = vec![0; n];
        let mut reps: Vec<usize> = Vec::new();
        for i in 0..n {
            match reps.iter().position(|&r| self.rows.row(r) == self.rows.row(i)) {
                Some(c) => assignment[i] = c,
                None => {
                    assignment[i] = reps.len();
                    reps.push(i);
                }
            }
        }
        let mut centroids = Array2::zeros((k, self.rows.ncols()));
        for (c, &r) in reps.iter().enumerate() {
            centroids.row_mut(c).assign(&self.rows.row(r));
        }
        let repairs = repair_empty(&self.rows, &mut centroids, &mut assignment, k);
        log::warn!(
            "{} distinct coefficient rows for {k} clusters; {repairs} empty-cluster repairs",
            reps.len()
        );
        (assignment, repairs)
    }
}
