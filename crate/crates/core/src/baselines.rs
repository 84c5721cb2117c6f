//! Comparison explainers: local regression with a plain Euclidean metric,
//! a perturbation-sampling surrogate and permutation-sampled Shapley values.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::locreg::{forward_stepwise, kernel_weights};
use crate::model::{check_dim, Predictor};
use crate::varimp::{explain_with_metric, LocalExplanation, LocalFitParams};

pub fn uniform_metric(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

/// Kernel-weighted stepwise fit on the observed rows with every feature
/// weighted `1/d` in the distance.
pub fn explain_iml_style(table: &DataTable, i: usize, params: &LocalFitParams) -> Result<LocalExplanation> {
    explain_with_metric(table, &uniform_metric(table.d()), i, params)
}

pub fn explain_iml_all(table: &DataTable, params: &LocalFitParams) -> Result<Vec<LocalExplanation>> {
    let v = uniform_metric(table.d());
    (0..table.n())
        .into_par_iter()
        .map(|i| explain_with_metric(table, &v, i, params).map_err(|e| e.at_instance(i)))
        .collect()
}

/// Perturbation points drawn uniformly from the unit cube and their
/// black-box predictions, shared by every instance explained with one seed.
#[derive(Debug, Clone)]
pub struct LimeSampler {
    samples: Array2<f64>,
    predictions: Array1<f64>,
    seed: u64,
}

impl LimeSampler {
    pub const DEFAULT_SAMPLES: usize = 1000;

    pub fn new<P: Predictor + ?Sized>(f: &P, n_samples: usize, seed: u64) -> Result<Self> {
        let d = f.n_features();
        if n_samples < d + 2 {
            return Err(Error::invalid(
                "n_samples",
                format!("need at least d + 2 = {} perturbations, got {n_samples}", d + 2),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = Array2::from_shape_simple_fn((n_samples, d), || rng.random::<f64>());
        let predictions = f.predict_rows(&samples)?;
        Ok(Self {
            samples,
            predictions,
            seed,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Surrogate around `x` (with black-box value `fx`), fit on `x` itself
    /// plus the perturbation set.
    pub fn explain(&self, index: usize, x: &[f64], fx: f64, params: &LocalFitParams) -> Result<LocalExplanation> {
        let d = self.samples.ncols();
        check_dim(d, x.len())?;
        let n = self.samples.nrows() + 1;
        let mut design = Array2::zeros((n, d));
        design.row_mut(0).assign(&ndarray::ArrayView1::from(x));
        design.slice_mut(ndarray::s![1.., ..]).assign(&self.samples);
        let mut target = Array1::zeros(n);
        target[0] = fx;
        target.slice_mut(ndarray::s![1..]).assign(&self.predictions);
        let kernel = kernel_weights(x, &design, &uniform_metric(d), params.bandwidth)?;
        let fit = forward_stepwise(&design, target.view(), kernel.weights.view(), &params.stepwise)?;
        Ok(LocalExplanation::from_fit(index, &fit, x, fx))
    }

    /// Explains every row of `table`, whose target holds the black-box predictions.
    pub fn explain_all(&self, table: &DataTable, params: &LocalFitParams) -> Result<Vec<LocalExplanation>> {
        (0..table.n())
            .into_par_iter()
            .map(|i| {
                let x = table.row(i).to_vec();
                self.explain(i, &x, table.target()[i], params).map_err(|e| e.at_instance(i))
            })
            .collect()
    }
}

/// Standalone perturbation surrogate for a single point.
pub fn explain_lime_style<P: Predictor + ?Sized>(
    f: &P,
    x: &[f64],
    n_samples: usize,
    params: &LocalFitParams,
    seed: u64,
) -> Result<LocalExplanation> {
    check_dim(f.n_features(), x.len())?;
    let sampler = LimeSampler::new(f, n_samples, seed)?;
    let fx = f.predict(x)?;
    sampler.explain(0, x, fx, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyExplanation {
    pub index: usize,
    pub values: Array1<f64>,
    /// Mean prediction over the background rows.
    pub baseline: f64,
    pub prediction: f64,
}

impl ShapleyExplanation {
    /// Shared export shape: values as effects, zero coefficients, baseline as intercept.
    pub fn to_local(&self) -> LocalExplanation {
        let d = self.values.len();
        LocalExplanation {
            index: self.index,
            intercept: self.baseline,
            coefficients: Array1::zeros(d),
            effects: self.values.clone(),
            local_prediction: self.baseline + self.values.sum(),
            black_box_prediction: self.prediction,
        }
    }
}

/// Interventional Shapley estimates against background rows of a data set.
pub struct ShapleySampler<'a, P: ?Sized> {
    f: &'a P,
    background: &'a Array2<f64>,
    baseline: f64,
}

impl<'a, P: Predictor + ?Sized> ShapleySampler<'a, P> {
    pub fn new(f: &'a P, background: &'a DataTable) -> Result<Self> {
        check_dim(f.n_features(), background.d())?;
        if background.n() == 0 {
            return Err(Error::Empty("shapley background"));
        }
        let preds = f.predict_rows(background.features())?;
        Ok(Self {
            f,
            background: background.features(),
            baseline: preds.mean().expect("nonempty"),
        })
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    /// Walks from background row `z` to `x` in feature order `perm`, adding
    /// each step's change in prediction to `acc`.
    fn chain(&self, x: &[f64], z: &[f64], perm: &[usize], acc: &mut [f64]) -> Result<()> {
        let mut current = z.to_vec();
        let mut prev = self.f.predict(&current)?;
        for &j in perm {
            current[j] = x[j];
            let next = self.f.predict(&current)?;
            acc[j] += next - prev;
            prev = next;
        }
        Ok(())
    }

    /// Monte-Carlo estimate from `n_permutations` (permutation, background row) draws.
    pub fn explain(&self, index: usize, x: &[f64], n_permutations: usize, seed: u64) -> Result<ShapleyExplanation> {
        let d = self.background.ncols();
        check_dim(d, x.len())?;
        if n_permutations == 0 {
            return Err(Error::invalid("n_permutations", "at least one permutation is required"));
        }
        let draws = (0..n_permutations)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(s as u64);
                let mut perm: Vec<usize> = (0..d).collect();
                perm.shuffle(&mut rng);
                let z = self.background.row(rng.random_range(0..self.background.nrows())).to_vec();
                let mut acc = vec![0.0; d];
                self.chain(x, &z, &perm, &mut acc)?;
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Array1::zeros(d);
        for acc in &draws {
            values += &Array1::from(acc.clone());
        }
        values /= n_permutations as f64;
        Ok(ShapleyExplanation {
            index,
            values,
            baseline: self.baseline,
            prediction: self.f.predict(x)?,
        })
    }

    /// Exact values by enumerating every feature ordering against every
    /// background row; cost grows as `d! * n`.
    pub fn explain_exact(&self, index: usize, x: &[f64]) -> Result<ShapleyExplanation> {
        let d = self.background.ncols();
        check_dim(d, x.len())?;
        if d > 9 {
            return Err(Error::invalid("d", format!("exact enumeration limited to 9 features, got {d}")));
        }
        let perms = permutations(d);
        let mut values = vec![0.0; d];
        for z in self.background.rows() {
            let z = z.to_vec();
            for perm in &perms {
                self.chain(x, &z, perm, &mut values)?;
            }
        }
        let count = (perms.len() * self.background.nrows()) as f64;
        Ok(ShapleyExplanation {
            index,
            values: values.into_iter().map(|v| v / count).collect(),
            baseline: self.baseline,
            prediction: self.f.predict(x)?,
        })
    }

    pub fn explain_all(&self, table: &DataTable, n_permutations: usize, seed: u64) -> Result<Vec<ShapleyExplanation>> {
        (0..table.n())
            .map(|i| {
                let x = table.row(i).to_vec();
                self.explain(i, &x, n_permutations, seed.wrapping_add(i as u64))
                    .map_err(|e| e.at_instance(i))
            })
            .collect()
    }
}

/// All orderings of `0..d` in lexicographic order.
fn permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..d).collect();
    loop {
        out.push(current.clone());
        // Next lexicographic permutation.
        let Some(i) = (0..d.saturating_sub(1)).rev().find(|&i| current[i] < current[i + 1]) else {
            return out;
        };
        let j = (i + 1..d).rev().find(|&j| current[j] > current[i]).unwrap();
        current.swap(i, j);
        current[i + 1..].reverse();
    }
}

/// Standalone Monte-Carlo Shapley values of `x` against background `table`.
pub fn shapley_mc<P: Predictor + ?Sized>(
    f: &P,
    x: &[f64],
    table: &DataTable,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapleyExplanation> {
    ShapleySampler::new(f, table)?.explain(0, x, n_permutations, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Synthetic};
    use crate::forest::ImportanceMatrix;
    use crate::model::FnPredictor;
    use crate::varimp;

    #[test]
    fn permutation_enumeration() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(1), vec![vec![0]]);
        let p = permutations(4);
        let mut sorted = p.clone();
        sorted.dedup();
        assert_eq!(sorted.len(), 24);
    }

    #[test]
    fn iml_matches_varimp_with_uniform_importance() {
        let (t, _) = generate_synthetic(2, 50, 4, 1).unwrap();
        let params = LocalFitParams::new(4).with_bandwidth(0.3);
        let imp = ImportanceMatrix::uniform(50, 4);
        for i in [0, 17, 49] {
            assert_eq!(
                explain_iml_style(&t, i, &params).unwrap(),
                varimp::explain_instance(&t, &imp, i, &params).unwrap()
            );
        }
    }

    #[test]
    fn iml_exact_linear_recovery() {
        let (t, _) = generate_synthetic(1, 60, 4, 2).unwrap();
        let f: Array1<f64> = t.features().rows().into_iter().map(|r| Synthetic::Linear.mean(r.as_slice().unwrap())).collect();
        let t = t.with_target(f).unwrap();
        for e in explain_iml_all(&t, &LocalFitParams::new(4)).unwrap() {
            assert!((e.coefficients[0] - 5.0).abs() < 1e-6);
            assert!((e.coefficients[1] + 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn lime_constant_and_linear() {
        let c = FnPredictor::new(3, |_: &[f64]| 4.0);
        let e = explain_lime_style(&c, &[0.2, 0.3, 0.4], 50, &LocalFitParams::new(3), 1).unwrap();
        assert!(e.coefficients.iter().all(|&b| b == 0.0));
        assert!((e.intercept - 4.0).abs() < 1e-12);

        let lin = FnPredictor::new(3, |x: &[f64]| 1.0 + 2.0 * x[0] - 3.0 * x[2]);
        let e = explain_lime_style(&lin, &[0.2, 0.3, 0.4], 5000, &LocalFitParams::new(3), 7).unwrap();
        for (b, t) in e.coefficients.iter().zip([2.0, 0.0, -3.0]) {
            assert!((b - t).abs() < 0.05);
        }
        assert!(explain_lime_style(&lin, &[0.2, 0.3, 0.4], 4, &LocalFitParams::new(3), 7).is_err());
    }

    #[test]
    fn lime_is_deterministic() {
        let f = FnPredictor::new(2, |x: &[f64]| (x[0] * 6.0).sin() + x[1]);
        let p = LocalFitParams::new(2);
        let a = explain_lime_style(&f, &[0.5, 0.5], 300, &p, 3).unwrap();
        let b = explain_lime_style(&f, &[0.5, 0.5], 300, &p, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lime_error_shrinks_with_samples() {
        // Spread of the slope estimate over seeds at two sample sizes.
        // Linear signal plus a high-frequency term that acts as noise.
        let noisy = |x: &[f64]| 2.0 * x[0] + x[1] + 0.5 * ((x[0] * 1e4).sin() + (x[1] * 7e3).cos());
        let g = FnPredictor::new(2, noisy);
        let p = LocalFitParams::new(2).with_bandwidth(1.0);
        let spread = |n: usize| {
            let est: Vec<f64> = (0..40)
                .map(|s| explain_lime_style(&g, &[0.5, 0.5], n, &p, s).unwrap().coefficients[0])
                .collect();
            let m = est.iter().sum::<f64>() / est.len() as f64;
            (est.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt()
        };
        let small = spread(100);
        let large = spread(1600);
        // sqrt(16) = 4
        let ratio = small / large;
        assert!(ratio > 2.5 && ratio < 6.5, "ratio {ratio}");
    }

    fn additive_table() -> DataTable {
        let x = ndarray::array![[0.1, 0.9, 0.3], [0.5, 0.2, 0.8], [0.7, 0.4, 0.1], [0.2, 0.6, 0.6]];
        DataTable::new(x, Array1::zeros(4), vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn exact_shapley_matches_additive_closed_form() {
        let parts: [fn(f64) -> f64; 3] = [|v| v * v, |v| (3.0 * v).sin(), |v| 2.0 * v];
        let f = FnPredictor::new(3, move |x: &[f64]| parts.iter().zip(x).map(|(p, v)| p(*v)).sum());
        let t = additive_table();
        let s = ShapleySampler::new(&f, &t).unwrap();
        let x = [0.35, 0.75, 0.5];
        let e = s.explain_exact(0, &x).unwrap();
        for j in 0..3 {
            let mean_j: f64 = t.features().column(j).iter().map(|&v| parts[j](v)).sum::<f64>() / 4.0;
            assert!((e.values[j] - (parts[j](x[j]) - mean_j)).abs() < 1e-12);
        }
        assert!((e.baseline + e.values.sum() - f.predict(&x).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn exact_shapley_symmetry() {
        let x = ndarray::array![[0.1, 0.1, 0.3], [0.5, 0.5, 0.8], [0.7, 0.7, 0.1]];
        let t = DataTable::new(x, Array1::zeros(3), vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let f = FnPredictor::new(3, |x: &[f64]| x[0] * x[1] + x[2]);
        let e = ShapleySampler::new(&f, &t).unwrap().explain_exact(0, &[0.4, 0.4, 0.2]).unwrap();
        assert!((e.values[0] - e.values[1]).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_approaches_exact() {
        let f = FnPredictor::new(3, |x: &[f64]| x[0] * x[1] + x[2] * x[2]);
        let t = additive_table();
        let s = ShapleySampler::new(&f, &t).unwrap();
        let x = [0.9, 0.8, 0.7];
        let exact = s.explain_exact(0, &x).unwrap();
        let mc = s.explain(0, &x, 4000, 5).unwrap();
        for j in 0..3 {
            assert!((exact.values[j] - mc.values[j]).abs() < 0.02);
        }
        let local = mc.to_local();
        assert!(local.coefficients.iter().all(|&c| c == 0.0));
        assert_eq!(local.effects, mc.values);
    }
}
