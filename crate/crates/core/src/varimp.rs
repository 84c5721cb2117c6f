//! Importance-weighted local linear explanations.
//!
//! For instance `i`, every row of the interpretation set is weighted by a
//! Gaussian kernel of its distance to `x_i`, where the distance weighs feature
//! `j` by the normalized local importance `v[i][j]`. A forward-stepwise WLS fit
//! of the black-box predictions on the features gives the local coefficients;
//! effects are coefficient times feature value.

use std::io::Write;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::forest::ImportanceMatrix;
use crate::locreg::{forward_stepwise, kernel_weights, LinearFit, StepwiseConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalExplanation {
    pub index: usize,
    pub intercept: f64,
    pub coefficients: Array1<f64>,
    pub effects: Array1<f64>,
    pub local_prediction: f64,
    pub black_box_prediction: f64,
}

impl LocalExplanation {
    /// Explanation of `x` by a linear model; `g(x)` is the intercept plus the effects.
    pub fn from_linear(index: usize, intercept: f64, coefficients: Array1<f64>, x: &[f64], black_box: f64) -> Self {
        let effects: Array1<f64> = coefficients.iter().zip(x).map(|(b, v)| b * v).collect();
        let local_prediction = intercept + effects.sum();
        Self {
            index,
            intercept,
            coefficients,
            effects,
            local_prediction,
            black_box_prediction: black_box,
        }
    }

    pub(crate) fn from_fit(index: usize, fit: &LinearFit, x: &[f64], black_box: f64) -> Self {
        Self::from_linear(index, fit.intercept, fit.coefficients.clone(), x, black_box)
    }

    /// Feature indices ordered by decreasing absolute effect.
    pub fn effect_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.effects.len()).collect();
        order.sort_by(|&a, &b| self.effects[b].abs().total_cmp(&self.effects[a].abs()).then(a.cmp(&b)));
        order
    }
}

/// One row per instance: intercept followed by the `d` slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrix(pub Array2<f64>);

impl CoefficientMatrix {
    pub fn from_explanations(explanations: &[LocalExplanation]) -> Self {
        let d = explanations.first().map_or(0, |e| e.coefficients.len());
        let mut m = Array2::zeros((explanations.len(), d + 1));
        for (i, e) in explanations.iter().enumerate() {
            m[[i, 0]] = e.intercept;
            for j in 0..d {
                m[[i, j + 1]] = e.coefficients[j];
            }
        }
        Self(m)
    }

    /// Slope columns only.
    pub fn slopes(&self) -> Array2<f64> {
        self.0.slice(ndarray::s![.., 1..]).to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFitParams {
    pub bandwidth: f64,
    pub stepwise: StepwiseConfig,
}

impl LocalFitParams {
    pub const DEFAULT_BANDWIDTH: f64 = 0.5;

    /// Default bandwidth with stepwise capped at `max_features`.
    pub fn new(max_features: usize) -> Self {
        Self {
            bandwidth: Self::DEFAULT_BANDWIDTH,
            stepwise: StepwiseConfig::new(max_features),
        }
    }

    pub fn with_bandwidth(mut self, h: f64) -> Self {
        self.bandwidth = h;
        self
    }
}

/// Local fit around row `i` of `table` with distance weights `v`.
pub(crate) fn explain_with_metric(
    table: &DataTable,
    v: &[f64],
    i: usize,
    params: &LocalFitParams,
) -> Result<LocalExplanation> {
    if i >= table.n() {
        return Err(Error::IndexOutOfRange { index: i, len: table.n() });
    }
    let row = table.row(i).to_vec();
    let kernel = kernel_weights(&row, table.features(), v, params.bandwidth)?;
    let fit = forward_stepwise(table.features(), table.target().view(), kernel.weights.view(), &params.stepwise)?;
    Ok(LocalExplanation::from_fit(i, &fit, &row, table.target()[i]))
}

fn check_importances(table: &DataTable, importances: &ImportanceMatrix) -> Result<()> {
    if importances.n() != table.n() || importances.d() != table.d() {
        return Err(Error::DimensionMismatch {
            context: "importance matrix vs table",
            expected: table.n() * table.d(),
            actual: importances.n() * importances.d(),
        });
    }
    Ok(())
}

/// Explains instance `i` of `table`, whose target column holds the black-box predictions.
pub fn explain_instance(
    table: &DataTable,
    importances: &ImportanceMatrix,
    i: usize,
    params: &LocalFitParams,
) -> Result<LocalExplanation> {
    check_importances(table, importances)?;
    if i >= table.n() {
        return Err(Error::IndexOutOfRange { index: i, len: table.n() });
    }
    let v = importances.normalized.row(i).to_vec();
    explain_with_metric(table, &v, i, params)
}

pub fn explain_all(
    table: &DataTable,
    importances: &ImportanceMatrix,
    params: &LocalFitParams,
) -> Result<(Vec<LocalExplanation>, CoefficientMatrix)> {
    check_importances(table, importances)?;
    let explanations = (0..table.n())
        .into_par_iter()
        .map(|i| explain_instance(table, importances, i, params).map_err(|e| e.at_instance(i)))
        .collect::<Result<Vec<_>>>()?;
    let b = CoefficientMatrix::from_explanations(&explanations);
    Ok((explanations, b))
}

/// CSV with one row per explanation: index, intercept, coefficients, effects, g, f.
pub fn write_explanations_csv<W: Write>(
    explanations: &[LocalExplanation],
    feature_names: &[String],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["index".to_string(), "intercept".to_string()];
    header.extend(feature_names.iter().map(|n| format!("beta_{n}")));
    header.extend(feature_names.iter().map(|n| format!("phi_{n}")));
    header.push("g".into());
    header.push("f".into());
    w.write_record(&header)?;
    for e in explanations {
        let mut rec = vec![e.index.to_string(), e.intercept.to_string()];
        rec.extend(e.coefficients.iter().map(f64::to_string));
        rec.extend(e.effects.iter().map(f64::to_string));
        rec.push(e.local_prediction.to_string());
        rec.push(e.black_box_prediction.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
