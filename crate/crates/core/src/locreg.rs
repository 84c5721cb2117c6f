//! Kernel-weighted local linear regression: weighted distances, Gaussian
//! kernel weights, weighted least squares and forward stepwise selection.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_symmetric;

/// `sum_j v_j (a_j - b_j)^2`
pub fn weighted_sq_distance(a: &[f64], b: &[f64], v: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "weighted distance operands",
            expected: a.len(),
            actual: if a.len() != b.len() { b.len() } else { v.len() },
        });
    }
    Ok(sq_distance_unchecked(a, b, v))
}

#[inline]
fn sq_distance_unchecked(a: &[f64], b: &[f64], v: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(v)
        .map(|((x, y), w)| w * (x - y) * (x - y))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights {
    pub weights: Array1<f64>,
    pub bandwidth: f64,
    /// Every kernel value underflowed and the weights fell back to uniform.
    pub underflow: bool,
}

/// Normalized Gaussian kernel weights of every row of `rows` around `anchor`
/// under the metric weighted by `v`.
pub fn kernel_weights(anchor: &[f64], rows: &Array2<f64>, v: &[f64], h: f64) -> Result<KernelWeights> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid("bandwidth", format!("must be positive and finite, got {h}")));
    }
    let d = rows.ncols();
    if anchor.len() != d || v.len() != d {
        return Err(Error::DimensionMismatch {
            context: "kernel anchor / importance weights",
            expected: d,
            actual: if anchor.len() != d { anchor.len() } else { v.len() },
        });
    }
    if rows.nrows() == 0 {
        return Err(Error::Empty("kernel rows"));
    }
    if v.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::invalid("v", "distance weights must be nonnegative and finite"));
    }
    let denom = 2.0 * h * h;
    let mut k: Array1<f64> = rows
        .rows()
        .into_iter()
        .map(|r| (-sq_distance_unchecked(anchor, r.as_slice().expect("standard layout"), v) / denom).exp())
        .collect();
    let total = k.sum();
    let underflow = total == 0.0;
    if underflow {
        log::warn!("all kernel values underflowed at bandwidth {h}; using uniform weights");
        k.fill(1.0 / rows.nrows() as f64);
    } else {
        k.mapv_inplace(|w| w / total);
    }
    Ok(KernelWeights {
        weights: k,
        bandwidth: h,
        underflow,
    })
}

/// Intercept plus coefficients over all `d` features (zero when unselected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    /// Selected features in the order they entered the model.
    pub selected: Vec<usize>,
    pub weighted_sse: f64,
    /// The normal equations were singular or ill-conditioned and were solved
    /// with the minimum-norm rule.
    pub degenerate: bool,
}

impl LinearFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

/// Weighted first and centered second moments of a design matrix.
pub(crate) struct Moments {
    d: usize,
    mean_x: Vec<f64>,
    mean_y: f64,
    /// Centered weighted cross products, row-major `d x d`.
    gram: Vec<f64>,
    cross: Vec<f64>,
    ss_y: f64,
    positive_rows: usize,
}

impl Moments {
    pub(crate) fn new(x: &Array2<f64>, y: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> Result<Self> {
        let (n, d) = x.dim();
        if y.len() != n || w.len() != n {
            return Err(Error::DimensionMismatch {
                context: "regression rows",
                expected: n,
                actual: if y.len() != n { y.len() } else { w.len() },
            });
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::invalid("weights", "must be nonnegative and finite"));
        }
        let total: f64 = w.sum();
        let positive_rows = w.iter().filter(|&&v| v > 0.0).count();
        if positive_rows == 0 || total <= 0.0 {
            return Err(Error::InsufficientRows {
                needed: 1,
                available: 0,
                params: 1,
            });
        }
        let mut mean_x = vec![0.0; d];
        let mut mean_y = 0.0;
        for i in 0..n {
            let wi = w[i] / total;
            if wi == 0.0 {
                continue;
            }
            let row = x.row(i);
            for j in 0..d {
                mean_x[j] += wi * row[j];
            }
            mean_y += wi * y[i];
        }
        let mut gram = vec![0.0; d * d];
        let mut cross = vec![0.0; d];
        let mut ss_y = 0.0;
        let mut centered = vec![0.0; d];
        for i in 0..n {
            let wi = w[i] / total;
            if wi == 0.0 {
                continue;
            }
            let row = x.row(i);
            for j in 0..d {
                centered[j] = row[j] - mean_x[j];
            }
            let ry = y[i] - mean_y;
            ss_y += wi * ry * ry;
            for j in 0..d {
                let wc = wi * centered[j];
                cross[j] += wc * ry;
                let g = &mut gram[j * d..j * d + j + 1];
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk += wc * centered[k];
                }
            }
        }
        for j in 0..d {
            for k in 0..j {
                gram[k * d + j] = gram[j * d + k];
            }
        }
        Ok(Self {
            d,
            mean_x,
            mean_y,
            gram,
            cross,
            ss_y,
            positive_rows,
        })
    }

    fn check_rows(&self, n_features: usize) -> Result<()> {
        let params = n_features + 1;
        if params > self.positive_rows {
            return Err(Error::InsufficientRows {
                needed: params,
                available: self.positive_rows,
                params,
            });
        }
        Ok(())
    }

    /// Slopes on `subset` and the explained weighted sum of squares.
    fn solve(&self, subset: &[usize]) -> (Vec<f64>, f64, bool) {
        let p = subset.len();
        let mut a = vec![0.0; p * p];
        let mut b = vec![0.0; p];
        for (r, &j) in subset.iter().enumerate() {
            b[r] = self.cross[j];
            for (c, &k) in subset.iter().enumerate() {
                a[r * p + c] = self.gram[j * self.d + k];
            }
        }
        let sol = solve_symmetric(&a, &b);
        let explained: f64 = sol.x.iter().zip(&b).map(|(x, c)| x * c).sum();
        (sol.x, explained, sol.degenerate)
    }

    fn assemble(&self, subset: &[usize], slopes: &[f64], degenerate: bool) -> LinearFit {
        let mut coefficients = Array1::zeros(self.d);
        let mut intercept = self.mean_y;
        for (&j, &b) in subset.iter().zip(slopes) {
            coefficients[j] = b;
            intercept -= b * self.mean_x[j];
        }
        LinearFit {
            intercept,
            coefficients,
            selected: subset.to_vec(),
            weighted_sse: 0.0,
            degenerate,
        }
    }
}

fn weighted_sse(fit: &LinearFit, x: &Array2<f64>, y: ArrayView1<'_, f64>, w: ArrayView1<'_, f64>) -> f64 {
    let total: f64 = w.sum();
    let mut sse = 0.0;
    for (i, row) in x.rows().into_iter().enumerate() {
        if w[i] == 0.0 {
            continue;
        }
        let mut g = fit.intercept;
        for &j in &fit.selected {
            g += fit.coefficients[j] * row[j];
        }
        let r = y[i] - g;
        sse += w[i] / total * r * r;
    }
    sse
}

/// Weighted least squares of `y` on the columns `subset` of `x`, intercept
/// always included. Weights are normalized to sum to one.
pub fn wls_fit(
    x: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    weights: ArrayView1<'_, f64>,
    subset: &[usize],
) -> Result<LinearFit> {
    if let Some(&bad) = subset.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: x.ncols(),
        });
    }
    let m = Moments::new(x, y, weights)?;
    fit_subset(&m, x, y, weights, subset)
}

fn fit_subset(
    m: &Moments,
    x: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    w: ArrayView1<'_, f64>,
    subset: &[usize],
) -> Result<LinearFit> {
    m.check_rows(subset.len())?;
    let (slopes, _, degenerate) = m.solve(subset);
    let mut fit = m.assemble(subset, &slopes, degenerate);
    fit.weighted_sse = weighted_sse(&fit, x, y, w);
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepwiseConfig {
    /// Maximum number of features the model may contain.
    pub max_features: usize,
    /// Stop once the best addition improves weighted SSE by less than this
    /// fraction; `None` always fills `max_features`.
    pub rel_tol: Option<f64>,
}

impl StepwiseConfig {
    pub const DEFAULT_REL_TOL: f64 = 1e-8;

    pub fn new(max_features: usize) -> Self {
        Self {
            max_features,
            rel_tol: Some(Self::DEFAULT_REL_TOL),
        }
    }

    pub fn exhaustive(max_features: usize) -> Self {
        Self {
            max_features,
            rel_tol: None,
        }
    }
}

/// Greedy forward selection from the intercept-only model, adding at each
/// step the feature that minimizes weighted SSE (lowest index on ties).
///
/// The model never grows past one parameter per positively weighted row.
/// The returned fit is recomputed on the selected set in ascending index order.
pub fn forward_stepwise(
    x: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    weights: ArrayView1<'_, f64>,
    config: &StepwiseConfig,
) -> Result<LinearFit> {
    let d = x.ncols();
    if config.max_features > d {
        return Err(Error::invalid(
            "max_features",
            format!("cap {} exceeds the {d} available features", config.max_features),
        ));
    }
    let m = Moments::new(x, y, weights)?;
    let selected = stepwise_path(&m, config);
    let mut sorted = selected.clone();
    sorted.sort_unstable();
    let mut fit = fit_subset(&m, x, y, weights, &sorted)?;
    fit.selected = selected;
    Ok(fit)
}

fn stepwise_path(m: &Moments, config: &StepwiseConfig) -> Vec<usize> {
    let cap = config.max_features.min(m.positive_rows.saturating_sub(1));
    let mut selected: Vec<usize> = Vec::with_capacity(cap);
    let mut in_model = vec![false; m.d];
    let mut sse = m.ss_y;
    // Residual SS below this is rounding noise on an exact fit.
    let floor = m.ss_y * 1e-13;
    let mut trial = Vec::with_capacity(cap);
    while selected.len() < cap {
        if config.rel_tol.is_some() && sse <= floor {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..m.d {
            if in_model[j] {
                continue;
            }
            trial.clear();
            trial.extend_from_slice(&selected);
            trial.push(j);
            let (_, explained, _) = m.solve(&trial);
            let candidate = (m.ss_y - explained).max(0.0);
            if best.is_none_or(|(_, s)| candidate < s) {
                best = Some((j, candidate));
            }
        }
        let Some((j, new_sse)) = best else { break };
        if let Some(tol) = config.rel_tol {
            if sse - new_sse <= tol * sse {
                break;
            }
        }
        selected.push(j);
        in_model[j] = true;
        sse = new_sse;
    }
    selected
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Normal equations for [1, x1, x2] solved by an explicit 3x3 cofactor inverse.
    fn normal_equation_oracle(x: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>) -> [f64; 3] {
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for i in 0..x.nrows() {
            let z = [1.0, x[[i, 0]], x[[i, 1]]];
            for r in 0..3 {
                b[r] += w[i] * z[r] * y[i];
                for c in 0..3 {
                    a[r][c] += w[i] * z[r] * z[c];
                }
            }
        }
        let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        let mut inv = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                let rows: Vec<usize> = (0..3).filter(|&k| k != c).collect();
                let cols: Vec<usize> = (0..3).filter(|&k| k != r).collect();
                let minor = a[rows[0]][cols[0]] * a[rows[1]][cols[1]] - a[rows[0]][cols[1]] * a[rows[1]][cols[0]];
                let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
                inv[r][c] = sign * minor / det;
            }
        }
        let mut beta = [0.0; 3];
        for r in 0..3 {
            for c in 0..3 {
                beta[r] += inv[r][c] * b[c];
            }
        }
        beta
    }

    #[test]
    fn distance_examples() {
        assert_eq!(weighted_sq_distance(&[1.0, 2.0], &[1.0, 2.0], &[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(weighted_sq_distance(&[0.0, 0.0], &[3.0, 4.0], &[0.5, 0.5]).unwrap(), 12.5);
        assert_eq!(weighted_sq_distance(&[0.2, 0.0], &[0.2, 9.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(weighted_sq_distance(&[0.0], &[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn kernel_examples() {
        let one = array![[0.3, 0.3]];
        let k = kernel_weights(&[0.1, 0.9], &one, &[0.5, 0.5], 0.2).unwrap();
        assert_eq!(k.weights.to_vec(), vec![1.0]);

        let two = array![[1.0, 0.0], [-1.0, 0.0]];
        let k = kernel_weights(&[0.0, 0.0], &two, &[0.5, 0.5], 0.7).unwrap();
        assert_eq!(k.weights.to_vec(), vec![0.5, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let rows = Array2::from_shape_simple_fn((10, 3), || rng.random::<f64>());
        let anchor = rows.row(0).to_vec();
        let k = kernel_weights(&anchor, &rows, &[1.0 / 3.0; 3], 100.0).unwrap();
        let max = k.weights.iter().copied().fold(f64::MIN, f64::max);
        let min = k.weights.iter().copied().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-4);
        assert!((k.weights.sum() - 1.0).abs() < 1e-12);
        assert_eq!(max, k.weights[0]);

        assert!(kernel_weights(&anchor, &rows, &[1.0 / 3.0; 3], 0.0).is_err());
    }

    #[test]
    fn kernel_underflow_is_uniform() {
        let rows = array![[0.0], [1.0]];
        let k = kernel_weights(&[100.0], &rows, &[1.0], 0.01).unwrap();
        assert!(k.underflow);
        assert_eq!(k.weights.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn exact_linear_and_constant() {
        let x = array![[0.1], [0.4], [0.5], [0.9]];
        let y = x.column(0).mapv(|v| 3.0 + 2.0 * v);
        let w = array![0.1, 0.5, 0.3, 0.1];
        let fit = wls_fit(&x, y.view(), w.view(), &[0]).unwrap();
        assert!((fit.intercept - 3.0).abs() < 1e-9);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-9);

        let c = Array1::from_elem(4, 1.7);
        let fit = wls_fit(&x, c.view(), w.view(), &[0]).unwrap();
        assert!((fit.intercept - 1.7).abs() < 1e-12);
        assert!(fit.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let x = Array2::from_shape_simple_fn((4, 2), || rng.random::<f64>());
        let y = Array1::from_shape_simple_fn(4, || rng.random::<f64>());
        let mut w = Array1::from_shape_simple_fn(4, || rng.random::<f64>() + 0.1);
        w /= w.sum();
        let oracle = normal_equation_oracle(&x, &y, &w);
        let fit = wls_fit(&x, y.view(), w.view(), &[0, 1]).unwrap();
        assert!((fit.intercept - oracle[0]).abs() < 1e-8);
        assert!((fit.coefficients[0] - oracle[1]).abs() < 1e-8);
        assert!((fit.coefficients[1] - oracle[2]).abs() < 1e-8);
    }

    #[test]
    fn insufficient_rows_names_deficit() {
        let x = array![[0.1, 0.2], [0.4, 0.1], [0.5, 0.3]];
        let y = array![1.0, 2.0, 3.0];
        let w = array![0.5, 0.5, 0.0];
        match wls_fit(&x, y.view(), w.view(), &[0, 1]) {
            Err(e @ Error::InsufficientRows { needed: 3, available: 2, .. }) => {
                assert!(e.to_string().contains("deficit 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_columns_flag_degenerate() {
        let x = array![[0.1, 0.1], [0.4, 0.4], [0.5, 0.5], [0.9, 0.9]];
        let y = x.column(0).mapv(|v| 1.0 + 4.0 * v);
        let w = Array1::from_elem(4, 0.25);
        let fit = wls_fit(&x, y.view(), w.view(), &[0, 1]).unwrap();
        assert!(fit.degenerate);
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-8);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-8);
        assert!((fit.intercept - 1.0).abs() < 1e-8);
    }

    fn noisy_problem(n: usize, d: usize, seed: u64) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, d), || rng.random::<f64>());
        let y = Array1::from_iter(x.rows().into_iter().map(|r| {
            let e: f64 = rng.sample(StandardNormal);
            2.0 * r[0] - r[d - 1] + 0.5 * e
        }));
        let mut w = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
        w /= w.sum();
        (x, y, w)
    }

    #[test]
    fn stepwise_zero_cap_is_weighted_mean() {
        let (x, y, w) = noisy_problem(30, 4, 1);
        let fit = forward_stepwise(&x, y.view(), w.view(), &StepwiseConfig::new(0)).unwrap();
        let mean: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((fit.intercept - mean).abs() < 1e-12);
        assert!(fit.selected.is_empty());
        assert!(fit.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn stepwise_full_cap_matches_wls() {
        let (x, y, w) = noisy_problem(40, 5, 2);
        let step = forward_stepwise(&x, y.view(), w.view(), &StepwiseConfig::exhaustive(5)).unwrap();
        let full = wls_fit(&x, y.view(), w.view(), &[0, 1, 2, 3, 4]).unwrap();
        assert_eq!(step.coefficients, full.coefficients);
        assert_eq!(step.intercept, full.intercept);
    }

    #[test]
    fn stepwise_first_pick_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_simple_fn((60, 5), || rng.random::<f64>());
        let y = Array1::from_iter(x.rows().into_iter().map(|r| {
            let e: f64 = rng.sample(StandardNormal);
            5.0 * r[2] + 0.01 * e
        }));
        let w = Array1::from_elem(60, 1.0 / 60.0);
        // Oracle: every single-feature model, best weighted SSE.
        let oracle = (0..5)
            .map(|j| (j, wls_fit(&x, y.view(), w.view(), &[j]).unwrap().weighted_sse))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_eq!(oracle, 2);
        let fit = forward_stepwise(&x, y.view(), w.view(), &StepwiseConfig::new(1)).unwrap();
        assert_eq!(fit.selected, vec![oracle]);
    }

    #[test]
    fn stepwise_ties_prefer_lowest_index() {
        let x = array![[0.1, 0.1], [0.4, 0.4], [0.5, 0.5], [0.9, 0.9]];
        let y = array![1.0, 2.0, 2.5, 4.0];
        let w = Array1::from_elem(4, 0.25);
        let fit = forward_stepwise(&x, y.view(), w.view(), &StepwiseConfig::new(2)).unwrap();
        assert_eq!(fit.selected, vec![0]);
    }

    #[test]
    fn stepwise_path_sse_is_monotone() {
        let (x, y, w) = noisy_problem(50, 6, 3);
        let mut prev = f64::INFINITY;
        for m in 0..=6 {
            let fit = forward_stepwise(&x, y.view(), w.view(), &StepwiseConfig::exhaustive(m)).unwrap();
            assert!(fit.weighted_sse <= prev + 1e-12);
            prev = fit.weighted_sse;
        }
    }

    #[test]
    fn residuals_are_weighted_orthogonal() {
        let (x, y, w) = noisy_problem(50, 4, 4);
        let fit = wls_fit(&x, y.view(), w.view(), &[0, 1, 2, 3]).unwrap();
        let r: Vec<f64> = (0..50).map(|i| y[i] - fit.predict(x.row(i).as_slice().unwrap())).collect();
        let s0: f64 = (0..50).map(|i| w[i] * r[i]).sum();
        assert!(s0.abs() < 1e-8);
        for j in 0..4 {
            let s: f64 = (0..50).map(|i| w[i] * r[i] * x[[i, j]]).sum();
            assert!(s.abs() < 1e-8);
        }
    }

    #[test]
    fn zero_weight_duplicate_rows_are_ignored() {
        let (x, y, w) = noisy_problem(30, 3, 6);
        let base = wls_fit(&x, y.view(), w.view(), &[0, 1, 2]).unwrap();
        let mut x2 = x.clone();
        x2.push_row(x.row(4)).unwrap();
        let mut y2 = y.to_vec();
        y2.push(y[4] + 10.0);
        let mut w2 = w.to_vec();
        w2.push(0.0);
        let dup = wls_fit(&x2, Array1::from(y2).view(), Array1::from(w2).view(), &[0, 1, 2]).unwrap();
        assert_eq!(base.coefficients, dup.coefficients);
        assert_eq!(base.intercept, dup.intercept);
    }
}
