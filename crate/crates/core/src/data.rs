//! Tabular data: synthetic generators with analytic local slopes, CSV ingestion,
//! min-max preprocessing and the half split into model-training and
//! interpretation sets.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Continuous,
    /// 0/1 column produced from one level of a categorical source column.
    Indicator { source: String, level: String },
}

/// Feature matrix with one target (or black-box prediction) per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    features: Array2<f64>,
    target: Array1<f64>,
    feature_names: Vec<String>,
    kinds: Vec<FeatureKind>,
    target_name: String,
}

impl DataTable {
    /// Builds a table of continuous features.
    pub fn new(features: Array2<f64>, target: Array1<f64>, feature_names: Vec<String>) -> Result<Self> {
        let kinds = vec![FeatureKind::Continuous; feature_names.len()];
        Self::with_kinds(features, target, feature_names, kinds, "y".to_string())
    }

    pub fn with_kinds(
        features: Array2<f64>,
        target: Array1<f64>,
        feature_names: Vec<String>,
        kinds: Vec<FeatureKind>,
        target_name: String,
    ) -> Result<Self> {
        if features.nrows() != target.len() {
            return Err(Error::DimensionMismatch {
                context: "table rows vs target length",
                expected: features.nrows(),
                actual: target.len(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::Empty("feature columns"));
        }
        for (len, context) in [(feature_names.len(), "feature names"), (kinds.len(), "feature kinds")] {
            if len != features.ncols() {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: features.ncols(),
                    actual: len,
                });
            }
        }
        if features.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("features", "table contains NaN or infinite values"));
        }
        Ok(Self {
            features,
            target,
            feature_names,
            kinds,
            target_name,
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn target(&self) -> &Array1<f64> {
        &self.target
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    /// Same features with a replacement target column, e.g. black-box predictions.
    pub fn with_target(&self, target: Array1<f64>) -> Result<Self> {
        Self::with_kinds(
            self.features.clone(),
            target,
            self.feature_names.clone(),
            self.kinds.clone(),
            self.target_name.clone(),
        )
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            target: self.target.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            kinds: self.kinds.clone(),
            target_name: self.target_name.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for (row, y) in self.features.rows().into_iter().zip(self.target.iter()) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Analytic local slopes and effects for a synthetic table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_coefficients: Array2<f64>,
    pub true_effects: Array2<f64>,
}

impl GroundTruth {
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            true_coefficients: self.true_coefficients.select(Axis(0), rows),
            true_effects: self.true_effects.select(Axis(0), rows),
        }
    }

    pub fn write_csv<W: Write>(&self, feature_names: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = feature_names
            .iter()
            .map(|n| format!("beta_{n}"))
            .chain(feature_names.iter().map(|n| format!("phi_{n}")))
            .collect();
        w.write_record(&header)?;
        for (b, e) in self.true_coefficients.rows().into_iter().zip(self.true_effects.rows()) {
            let rec: Vec<String> = b.iter().chain(e.iter()).map(|v| v.to_string()).collect();
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// The six generators with known local slopes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Synthetic {
    /// `1 + 5 x1 - 5 x2`
    Linear,
    /// `20 x1` up to 0.5, `20 - 20 x1` beyond.
    Tent,
    /// Alternating-sign sum over continuous features.
    AlternatingContinuous,
    /// Alternating-sign sum over Bernoulli(1/2) features.
    AlternatingBinary,
    /// `20 x1` on `[1/3, 2/3]`, zero elsewhere.
    Step,
    /// `20 sin(2 pi x1)`
    Sine,
}

impl Synthetic {
    pub const ALL: [Synthetic; 6] = [
        Synthetic::Linear,
        Synthetic::Tent,
        Synthetic::AlternatingContinuous,
        Synthetic::AlternatingBinary,
        Synthetic::Step,
        Synthetic::Sine,
    ];

    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            1..=6 => Ok(Self::ALL[id as usize - 1]),
            _ => Err(Error::UnknownDataset(id)),
        }
    }

    pub fn id(self) -> u32 {
        Self::ALL.iter().position(|&s| s == self).unwrap() as u32 + 1
    }

    pub fn min_features(self) -> usize {
        match self {
            Synthetic::Linear => 2,
            _ => 1,
        }
    }

    /// Noise-free regression function.
    pub fn mean(self, x: &[f64]) -> f64 {
        let x1 = x[0];
        match self {
            Synthetic::Linear => 1.0 + 5.0 * x1 - 5.0 * x[1],
            Synthetic::Tent => {
                if x1 <= 0.5 {
                    20.0 * x1
                } else {
                    20.0 - 20.0 * x1
                }
            }
            Synthetic::AlternatingContinuous | Synthetic::AlternatingBinary => {
                x.iter().enumerate().map(|(j, v)| alternating_sign(j) * v).sum()
            }
            Synthetic::Step => {
                if (1.0 / 3.0..=2.0 / 3.0).contains(&x1) {
                    20.0 * x1
                } else {
                    0.0
                }
            }
            Synthetic::Sine => 20.0 * (2.0 * PI * x1).sin(),
        }
    }

    /// Partial derivative of [`Synthetic::mean`] with respect to feature `j`.
    ///
    /// At kinks and jumps the slope of the branch to the left is used.
    pub fn slope(self, x: &[f64], j: usize) -> f64 {
        let x1 = x[0];
        match (self, j) {
            (Synthetic::Linear, 0) => 5.0,
            (Synthetic::Linear, 1) => -5.0,
            (Synthetic::AlternatingContinuous | Synthetic::AlternatingBinary, j) => alternating_sign(j),
            (Synthetic::Tent, 0) => {
                if x1 <= 0.5 {
                    20.0
                } else {
                    -20.0
                }
            }
            (Synthetic::Step, 0) => {
                if x1 > 1.0 / 3.0 && x1 <= 2.0 / 3.0 {
                    20.0
                } else {
                    0.0
                }
            }
            (Synthetic::Sine, 0) => 40.0 * PI * (2.0 * PI * x1).cos(),
            _ => 0.0,
        }
    }

    /// Draws `n` rows with `d` features, targets with standard normal noise,
    /// and the analytic ground truth.
    pub fn generate(self, n: usize, d: usize, seed: u64) -> Result<(DataTable, GroundTruth)> {
        if n == 0 {
            return Err(Error::invalid("n", "at least one row is required"));
        }
        if d < self.min_features() {
            return Err(Error::invalid(
                "d",
                format!("dataset {} needs at least {} features, got {d}", self.id(), self.min_features()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let binary = self == Synthetic::AlternatingBinary;
        let features = Array2::from_shape_simple_fn((n, d), || {
            if binary {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            } else {
                rng.random::<f64>()
            }
        });
        let target = Array1::from_iter(features.rows().into_iter().map(|row| {
            let noise: f64 = rng.sample(StandardNormal);
            self.mean(row.as_slice().unwrap()) + noise
        }));
        let truth = self.ground_truth(&features);
        let names = (1..=d).map(|j| format!("x{j}")).collect();
        Ok((DataTable::new(features, target, names)?, truth))
    }

    pub fn ground_truth(self, features: &Array2<f64>) -> GroundTruth {
        let (n, d) = features.dim();
        let mut coef = Array2::zeros((n, d));
        for (i, row) in features.rows().into_iter().enumerate() {
            let x = row.as_slice().unwrap();
            for j in 0..d {
                coef[[i, j]] = self.slope(x, j);
            }
        }
        let effects = &coef * features;
        GroundTruth {
            true_coefficients: coef,
            true_effects: effects,
        }
    }
}

fn alternating_sign(j: usize) -> f64 {
    if j % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Generator entry point by numeric id (1..=6).
pub fn generate_synthetic(id: u32, n: usize, d: usize, seed: u64) -> Result<(DataTable, GroundTruth)> {
    Synthetic::from_id(id)?.generate(n, d, seed)
}

#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub table: DataTable,
    /// Rows removed because at least one used cell was empty or `NA`.
    pub dropped_rows: usize,
}

pub fn load_csv(path: impl AsRef<Path>, target_column: &str, categorical_columns: &[String]) -> Result<CsvLoad> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target_column, categorical_columns)
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c == "?"
}

/// Parses a headed CSV; categorical columns become one indicator per level
/// (levels in sorted order) and rows with missing cells are dropped.
pub fn read_csv<R: Read>(reader: R, target_column: &str, categorical_columns: &[String]) -> Result<CsvLoad> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    for c in categorical_columns {
        if !headers.contains(c) {
            return Err(Error::MissingColumn(c.clone()));
        }
    }

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    let mut dropped = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cells: Vec<String> = rec.iter().map(|c| c.trim().to_string()).collect();
        if cells.iter().any(|c| is_missing(c)) {
            dropped += 1;
            continue;
        }
        rows.push((line + 1, cells));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing values");
    }
    if rows.is_empty() {
        return Err(Error::Empty("csv rows after dropping missing values"));
    }

    // Column plan: continuous columns keep position, categoricals expand in place.
    enum Plan {
        Numeric(usize),
        Level(usize, String),
    }
    let mut plan = Vec::new();
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        if c == target_idx {
            continue;
        }
        if categorical_columns.contains(h) {
            let levels: BTreeSet<&str> = rows.iter().map(|(_, r)| r[c].as_str()).collect();
            for level in levels {
                plan.push(Plan::Level(c, level.to_string()));
                names.push(format!("{h}={level}"));
                kinds.push(FeatureKind::Indicator {
                    source: h.clone(),
                    level: level.to_string(),
                });
            }
        } else {
            plan.push(Plan::Numeric(c));
            names.push(h.clone());
            kinds.push(FeatureKind::Continuous);
        }
    }

    let parse = |row: usize, col: usize, cell: &str| -> Result<f64> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::ParseCell {
                column: headers[col].clone(),
                row,
                value: cell.to_string(),
            })
    };

    let mut features = Array2::zeros((rows.len(), plan.len()));
    let mut target = Array1::zeros(rows.len());
    for (i, (line, cells)) in rows.iter().enumerate() {
        target[i] = parse(*line, target_idx, &cells[target_idx])?;
        for (j, p) in plan.iter().enumerate() {
            features[[i, j]] = match p {
                Plan::Numeric(c) => parse(*line, *c, &cells[*c])?,
                Plan::Level(c, level) => f64::from(u8::from(cells[*c] == *level)),
            };
        }
    }
    let table = DataTable::with_kinds(features, target, names, kinds, target_column.to_string())?;
    Ok(CsvLoad {
        table,
        dropped_rows: dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Min-max parameters for continuous columns; indicator columns pass through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub columns: Vec<(String, Option<ColumnScaling>)>,
}

pub fn fit_preprocess(table: &DataTable) -> PreprocessSpec {
    let columns = table
        .feature_names()
        .iter()
        .zip(table.kinds())
        .enumerate()
        .map(|(j, (name, kind))| {
            let scaling = match kind {
                FeatureKind::Continuous => {
                    let col = table.features().column(j);
                    let min = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    Some(ColumnScaling {
                        name: name.clone(),
                        min,
                        max,
                    })
                }
                FeatureKind::Indicator { .. } => None,
            };
            (name.clone(), scaling)
        })
        .collect();
    PreprocessSpec { columns }
}

pub fn apply_preprocess(spec: &PreprocessSpec, table: &DataTable) -> Result<DataTable> {
    let names: Vec<&String> = spec.columns.iter().map(|(n, _)| n).collect();
    if names.len() != table.d() || names.iter().zip(table.feature_names()).any(|(a, b)| *a != b) {
        return Err(Error::SchemaMismatch(format!(
            "spec columns {:?} vs table columns {:?}",
            names,
            table.feature_names()
        )));
    }
    let mut features = table.features().clone();
    for (j, (_, scaling)) in spec.columns.iter().enumerate() {
        if let Some(s) = scaling {
            let range = s.max - s.min;
            features.column_mut(j).mapv_inplace(|v| if range > 0.0 { (v - s.min) / range } else { 0.0 });
        }
    }
    DataTable::with_kinds(
        features,
        table.target().clone(),
        table.feature_names().to_vec(),
        table.kinds().to_vec(),
        table.target_name().to_string(),
    )
}

/// Shuffled disjoint halves of `0..n`; the first (model-training) half takes
/// the odd row. Each half is returned in ascending order.
pub fn split_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid("n", format!("splitting needs at least 2 rows, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = n.div_ceil(2);
    let mut train = idx[..cut].to_vec();
    let mut interp = idx[cut..].to_vec();
    train.sort_unstable();
    interp.sort_unstable();
    Ok((train, interp))
}

/// Splits into `(D', D)`: the model-training half and the interpretation half.
pub fn split_half(table: &DataTable, seed: u64) -> Result<(DataTable, DataTable)> {
    let (a, b) = split_indices(table.n(), seed)?;
    Ok((table.select_rows(&a), table.select_rows(&b)))
}
