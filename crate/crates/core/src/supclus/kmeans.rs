use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct KMeansResult {
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Number of times an empty cluster was reseeded.
    pub repairs: usize,
}

const MAX_ITER: usize = 300;

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ArrayView1<'_, f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut dist: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            dist[i] = dist[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Moves, into each empty cluster, the point farthest from its own centroid
/// among clusters with more than one member. Returns the number of moves.
pub(crate) fn repair_empty(points: &Array2<f64>, centroids: &mut Array2<f64>, assignment: &mut [usize], k: usize) -> usize {
    let mut repairs = 0;
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignment.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return repairs;
        };
        let mut far: Option<(usize, f64)> = None;
        for (i, p) in points.rows().into_iter().enumerate() {
            if sizes[assignment[i]] < 2 {
                continue;
            }
            let d = sq_dist(p, centroids.row(assignment[i]));
            if far.is_none_or(|(_, best)| d > best) {
                far = Some((i, d));
            }
        }
        let Some((i, _)) = far else { return repairs };
        assignment[i] = empty;
        centroids.row_mut(empty).assign(&points.row(i));
        repairs += 1;
    }
}

fn lloyd(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    let (n, dim) = points.dim();
    let mut centroids = plus_plus_seed(points, k, rng);
    let mut assignment = vec![usize::MAX; n];
    let mut repairs = 0;
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (i, p) in points.rows().into_iter().enumerate() {
            let (c, dist) = nearest(p, &centroids);
            // Equidistant points stay where they are.
            if assignment[i] != c && (assignment[i] == usize::MAX || sq_dist(p, centroids.row(assignment[i])) > dist) {
                assignment[i] = c;
                changed = true;
            }
        }
        repairs += repair_empty(points, &mut centroids, &mut assignment, k);
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, dim));
        let mut counts = vec![0usize; k];
        for (i, p) in points.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &p);
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
    }
    let inertia = points
        .rows()
        .into_iter()
        .zip(&assignment)
        .map(|(p, &a)| sq_dist(p, centroids.row(a)))
        .sum();
    KMeansResult {
        assignment,
        inertia,
        repairs,
    }
}

/// k-means++ seeded Lloyd iterations, best of `restarts` by inertia
/// (earliest restart wins ties).
pub(crate) fn kmeans(points: &Array2<f64>, k: usize, restarts: usize, seed: u64) -> KMeansResult {
    let runs: Vec<KMeansResult> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            lloyd(points, k, &mut rng)
        })
        .collect();
    runs.into_iter()
        .reduce(|best, r| if r.inertia < best.inertia { r } else { best })
        .expect("at least one restart")
}
