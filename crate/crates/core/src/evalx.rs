//! Measures comparing explanations with ground truth, ICE effects and the
//! black box, plus the data behind local slope plots.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DataTable, GroundTruth};
use crate::error::{Error, Result};
use crate::varimp::LocalExplanation;

/// Two-sided 95% standard normal quantile.
const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

fn check_shape(a: (usize, usize), b: (usize, usize), context: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            context,
            expected: a.0 * a.1,
            actual: b.0 * b.1,
        });
    }
    Ok(())
}

/// `(1 / nd) * sum (B - B_hat)^2` over slope columns.
pub fn mse_coefficients(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<f64> {
    check_shape(truth.dim(), estimate.dim(), "coefficient matrices")?;
    if truth.is_empty() {
        return Err(Error::Empty("coefficient matrices"));
    }
    let sum: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / truth.len() as f64)
}

/// Pearson correlation with a Fisher-z 95% interval.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<Correlation> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "correlation operands",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let n = a.len();
    if n < 3 {
        return Err(Error::Undefined(format!("correlation needs at least 3 pairs, got {n}")));
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Undefined("zero variance in a correlation operand".into()));
    }
    let r = (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0);
    let (ci_low, ci_high) = if n <= 3 {
        (-1.0, 1.0)
    } else if r.abs() == 1.0 {
        (r, r)
    } else {
        let z = r.atanh();
        let half = Z_95 / ((n - 3) as f64).sqrt();
        ((z - half).tanh(), (z + half).tanh())
    };
    Ok(Correlation { r, ci_low, ci_high, n })
}

/// Correlation of true and estimated effects over every (instance, feature) pair.
pub fn effect_correlation(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<Correlation> {
    check_shape(truth.dim(), estimate.dim(), "effect matrices")?;
    let a: Vec<f64> = truth.iter().copied().collect();
    let b: Vec<f64> = estimate.iter().copied().collect();
    pearson(&a, &b)
}

pub fn prediction_correlation(f: &[f64], g: &[f64]) -> Result<Correlation> {
    pearson(f, g)
}

pub fn ice_effect_correlation(ice: &Array2<f64>, estimate: &Array2<f64>) -> Result<Correlation> {
    effect_correlation(ice, estimate)
}

pub fn coefficient_matrix(explanations: &[LocalExplanation]) -> Array2<f64> {
    let d = explanations.first().map_or(0, |e| e.coefficients.len());
    Array2::from_shape_fn((explanations.len(), d), |(i, j)| explanations[i].coefficients[j])
}

pub fn effect_matrix(explanations: &[LocalExplanation]) -> Array2<f64> {
    let d = explanations.first().map_or(0, |e| e.effects.len());
    Array2::from_shape_fn((explanations.len(), d), |(i, j)| explanations[i].effects[j])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeSegment {
    pub index: usize,
    pub x: f64,
    pub f: f64,
    pub slope: f64,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Segments of slope `beta[i][j]` through `(x[i][j], f(x_i))` for a seeded
/// subsample of `n_points` instances, in instance order.
pub fn slope_plot_data(
    table: &DataTable,
    explanations: &[LocalExplanation],
    feature: usize,
    n_points: usize,
    halfwidth: f64,
    seed: u64,
) -> Result<Vec<SlopeSegment>> {
    let n = table.n();
    if explanations.len() != n {
        return Err(Error::DimensionMismatch {
            context: "explanations vs table rows",
            expected: n,
            actual: explanations.len(),
        });
    }
    if feature >= table.d() {
        return Err(Error::IndexOutOfRange {
            index: feature,
            len: table.d(),
        });
    }
    if n_points > n {
        return Err(Error::invalid("n_points", format!("{n_points} exceeds {n} instances")));
    }
    let mut picked = rand::seq::index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, n_points).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| {
            let x = table.features()[[i, feature]];
            let f = explanations[i].black_box_prediction;
            let slope = explanations[i].coefficients[feature];
            SlopeSegment {
                index: i,
                x,
                f,
                slope,
                x0: x - halfwidth,
                y0: f - slope * halfwidth,
                x1: x + halfwidth,
                y1: f + slope * halfwidth,
            }
        })
        .collect())
}

pub fn write_slope_csv<W: Write>(segments: &[SlopeSegment], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in segments {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub dataset: String,
    pub seed: u64,
    pub bandwidth: Option<f64>,
    pub max_features: Option<usize>,
    pub k: Option<usize>,
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub mse_coefficients: Option<f64>,
    pub effect_correlation: Option<Correlation>,
    pub prediction_correlation: Option<Correlation>,
    pub ice_effect_correlation: Option<Correlation>,
    /// Why a measure is missing, keyed by measure name.
    pub absent: BTreeMap<String, String>,
    pub metadata: RunMetadata,
}

/// What is known about the instances beyond the explanations themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct References<'a> {
    pub truth: Option<&'a GroundTruth>,
    pub ice_effects: Option<&'a Array2<f64>>,
}

/// Computes every applicable measure. `surrogate` is false for attribution
/// methods that estimate no coefficients and no local model.
pub fn evaluate(
    method: &str,
    explanations: &[LocalExplanation],
    refs: References<'_>,
    surrogate: bool,
    metadata: RunMetadata,
) -> Result<EvalReport> {
    let mut absent = BTreeMap::new();
    let coefs = coefficient_matrix(explanations);
    let effects = effect_matrix(explanations);

    let mut mse = None;
    let mut effect_r = None;
    match refs.truth {
        Some(truth) => {
            if surrogate {
                mse = Some(mse_coefficients(&truth.true_coefficients, &coefs)?);
            } else {
                absent.insert("mse_coefficients".into(), "method estimates no coefficients".into());
            }
            effect_r = keep(effect_correlation(&truth.true_effects, &effects), "effect_correlation", &mut absent)?;
        }
        None => {
            absent.insert("mse_coefficients".into(), "no ground truth".into());
            absent.insert("effect_correlation".into(), "no ground truth".into());
        }
    }

    let prediction_r = if surrogate {
        let f: Vec<f64> = explanations.iter().map(|e| e.black_box_prediction).collect();
        let g: Vec<f64> = explanations.iter().map(|e| e.local_prediction).collect();
        keep(prediction_correlation(&f, &g), "prediction_correlation", &mut absent)?
    } else {
        absent.insert("prediction_correlation".into(), "method has no local model".into());
        None
    };

    let ice_r = match refs.ice_effects {
        Some(ice) => keep(ice_effect_correlation(ice, &effects), "ice_effect_correlation", &mut absent)?,
        None => {
            absent.insert("ice_effect_correlation".into(), "ICE effects not computed".into());
            None
        }
    };

    Ok(EvalReport {
        method: method.to_string(),
        mse_coefficients: mse,
        effect_correlation: effect_r,
        prediction_correlation: prediction_r,
        ice_effect_correlation: ice_r,
        absent,
        metadata,
    })
}

fn keep(r: Result<Correlation>, name: &str, absent: &mut BTreeMap<String, String>) -> Result<Option<Correlation>> {
    match r {
        Ok(c) => Ok(Some(c)),
        Err(Error::Undefined(reason)) => {
            absent.insert(name.to_string(), reason);
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub const REPORT_CSV_HEADER: [&str; 20] = [
    "dataset",
    "method",
    "h",
    "max_features",
    "k",
    "samples",
    "seed",
    "mse_coefficients",
    "effect_r",
    "effect_ci_low",
    "effect_ci_high",
    "prediction_r",
    "prediction_ci_low",
    "prediction_ci_high",
    "ice_r",
    "ice_ci_low",
    "ice_ci_high",
    "n_effect",
    "n_prediction",
    "n_ice",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    /// Flat CSV cells in [`REPORT_CSV_HEADER`] order; absent values are empty.
    pub fn csv_record(&self) -> Vec<String> {
        let m = &self.metadata;
        let corr = |c: &Option<Correlation>| {
            [
                opt(c.map(|c| c.r)),
                opt(c.map(|c| c.ci_low)),
                opt(c.map(|c| c.ci_high)),
            ]
        };
        let mut rec = vec![
            m.dataset.clone(),
            self.method.clone(),
            opt(m.bandwidth),
            opt(m.max_features),
            opt(m.k),
            opt(m.samples),
            m.seed.to_string(),
            opt(self.mse_coefficients),
        ];
        rec.extend(corr(&self.effect_correlation));
        rec.extend(corr(&self.prediction_correlation));
        rec.extend(corr(&self.ice_effect_correlation));
        rec.push(opt(self.effect_correlation.map(|c| c.n)));
        rec.push(opt(self.prediction_correlation.map(|c| c.n)));
        rec.push(opt(self.ice_effect_correlation.map(|c| c.n)));
        rec
    }
}

pub fn write_reports_csv<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        w.write_record(r.csv_record())?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    /// Textbook formula: r = (n sum xy - sum x sum y) / sqrt((n sum x² - (sum x)²)(n sum y² - (sum y)²)).
    fn textbook_r(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
    }

    #[test]
    fn mse_examples() {
        let b = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(mse_coefficients(&b, &b).unwrap(), 0.0);
        assert_eq!(mse_coefficients(&b, &(&b + 1.0)).unwrap(), 1.0);
        assert_eq!(mse_coefficients(&b, &array![[1.0, 2.0], [3.0, 0.0]]).unwrap(), 4.0);
        assert!(mse_coefficients(&b, &array![[1.0, 2.0]]).is_err());
    }

    #[test]
    fn effect_correlation_examples() {
        let phi = array![[1.0, 0.0], [2.0, -1.0], [0.5, 3.0]];
        assert!((effect_correlation(&phi, &(&phi * 2.0)).unwrap().r - 1.0).abs() < 1e-15);
        assert!((effect_correlation(&phi, &(-&phi)).unwrap().r + 1.0).abs() < 1e-15);
        // Four hand-set pairs: x = (1, 2, 3, 4), y = (2, 1, 4, 3) gives r = 0.6.
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[2.0, 1.0], [4.0, 3.0]];
        let c = effect_correlation(&a, &b).unwrap();
        assert!((c.r - 0.6).abs() < 1e-14);
        assert!((c.r - textbook_r(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0])).abs() < 1e-14);
        assert!(c.ci_low < c.r && c.r < c.ci_high);
    }

    #[test]
    fn prediction_and_ice_examples() {
        let f = [0.3, 1.2, -0.7, 2.2, 0.9];
        let g = [0.1, 1.0, -0.2, 2.5, 0.4];
        assert!((prediction_correlation(&f, &f).unwrap().r - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!((prediction_correlation(&f, &neg).unwrap().r + 1.0).abs() < 1e-15);
        let r = prediction_correlation(&f, &g).unwrap().r;
        assert!((r - textbook_r(&f, &g)).abs() < 1e-12);

        let ice = array![[0.2, -0.1], [0.4, 0.0], [0.9, 0.3]];
        let est = array![[0.1, -0.2], [0.5, 0.1], [0.7, 0.2]];
        let r = ice_effect_correlation(&ice, &est).unwrap().r;
        let flat = |m: &Array2<f64>| m.iter().copied().collect::<Vec<_>>();
        assert!((r - textbook_r(&flat(&ice), &flat(&est))).abs() < 1e-12);
        assert!((ice_effect_correlation(&ice, &ice).unwrap().r - 1.0).abs() < 1e-15);
        assert!((ice_effect_correlation(&ice, &(-&ice)).unwrap().r + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert!(matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::Undefined(_))));
        assert!(matches!(pearson(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
    }

    #[test]
    fn fisher_interval() {
        let c = pearson(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], &[1.0, 3.0, 2.0, 5.0, 4.0, 7.0, 6.0]).unwrap();
        let z = c.r.atanh();
        let half = 1.959963984540054 / 2.0;
        assert!((c.ci_low - (z - half).tanh()).abs() < 1e-14);
        assert!((c.ci_high - (z + half).tanh()).abs() < 1e-14);
    }

    fn expl(index: usize, x: f64, f: f64, slope: f64) -> LocalExplanation {
        LocalExplanation::from_linear(index, f - slope * x, Array1::from(vec![slope]), &[x], f)
    }

    #[test]
    fn slope_segments() {
        let t = DataTable::new(array![[0.2], [0.5], [0.8]], array![1.0, 2.0, 3.0], vec!["a".into()]).unwrap();
        let ex = vec![expl(0, 0.2, 1.0, 0.0), expl(1, 0.5, 2.0, 2.0), expl(2, 0.8, 3.0, -1.0)];
        let segs = slope_plot_data(&t, &ex, 0, 3, 0.05, 1).unwrap();
        assert_eq!(segs.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(segs[0].y0, segs[0].y1);
        assert!((segs[1].y0 - 1.9).abs() < 1e-12 && (segs[1].y1 - 2.1).abs() < 1e-12);
        assert_eq!(slope_plot_data(&t, &ex, 0, 2, 0.05, 1).unwrap().len(), 2);
        assert!(slope_plot_data(&t, &ex, 0, 4, 0.05, 1).is_err());
    }

    #[test]
    fn report_round_trips() {
        let t = DataTable::new(array![[0.2], [0.5], [0.8], [0.9]], array![1.0, 2.0, 3.5, 3.0], vec!["a".into()]).unwrap();
        let ex: Vec<LocalExplanation> = (0..4)
            .map(|i| expl(i, t.row(i)[0], t.target()[i], 1.0 + i as f64 * 0.1))
            .collect();
        let truth = GroundTruth {
            true_coefficients: array![[1.0], [1.0], [1.2], [1.4]],
            true_effects: array![[0.2], [0.5], [0.96], [1.26]],
        };
        let r = evaluate(
            "varimp",
            &ex,
            References {
                truth: Some(&truth),
                ice_effects: None,
            },
            true,
            RunMetadata::default(),
        )
        .unwrap();
        assert!(r.mse_coefficients.is_some());
        assert!(r.absent.contains_key("ice_effect_correlation"));
        let json = serde_json::to_string(&r).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);

        let shap = evaluate("shapley", &ex, References::default(), false, RunMetadata::default()).unwrap();
        assert!(shap.mse_coefficients.is_none() && shap.prediction_correlation.is_none());
    }

    proptest! {
        #[test]
        fn mse_symmetric_and_zero_on_self(v in proptest::collection::vec(-50.0f64..50.0, 6), w in proptest::collection::vec(-50.0f64..50.0, 6)) {
            let a = Array2::from_shape_vec((2, 3), v).unwrap();
            let b = Array2::from_shape_vec((2, 3), w).unwrap();
            prop_assert_eq!(mse_coefficients(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(mse_coefficients(&a, &b).unwrap(), mse_coefficients(&b, &a).unwrap());
        }

        #[test]
        fn correlation_affine_invariant(
            v in proptest::collection::vec(-10.0f64..10.0, 8),
            w in proptest::collection::vec(-10.0f64..10.0, 8),
            scale in 0.1f64..20.0,
            shift in -100.0f64..100.0,
        ) {
            if let Ok(base) = pearson(&v, &w) {
                let moved: Vec<f64> = w.iter().map(|x| scale * x + shift).collect();
                let c = pearson(&v, &moved).unwrap();
                prop_assert!((c.r - base.r).abs() < 1e-9);
                prop_assert!(c.r >= -1.0 && c.r <= 1.0);
            }
        }
    }
}
