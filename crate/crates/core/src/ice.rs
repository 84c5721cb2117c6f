//! Individual conditional expectation curves and the finite-difference
//! effects derived from them.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataTable;
use crate::error::{Error, Result};
use crate::model::Predictor;

pub const DEFAULT_GRID_SIZE: usize = 51;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IceCurve {
    pub instance: usize,
    pub feature: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IceEffect {
    pub slope: f64,
    pub effect: f64,
    /// The feature has no spread in the data, so no slope could be taken.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy)]
struct Grid {
    min: f64,
    step: f64,
    size: usize,
}

impl Grid {
    fn for_feature(table: &DataTable, j: usize, size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::invalid("grid_size", format!("need at least 2 points, got {size}")));
        }
        if j >= table.d() {
            return Err(Error::IndexOutOfRange { index: j, len: table.d() });
        }
        let col = table.features().column(j);
        let min = col.iter().copied().fold(f64::INFINITY, f64::min);
        let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            min,
            step: (max - min) / (size - 1) as f64,
            size,
        })
    }

    fn point(&self, k: usize) -> f64 {
        if k + 1 == self.size {
            // Land exactly on the observed maximum.
            self.min + self.step * (self.size - 1) as f64
        } else {
            self.min + self.step * k as f64
        }
    }

    /// Grid indices whose values determine the slope at `x`.
    fn stencil(&self, x: f64) -> (usize, usize) {
        let last = self.size - 1;
        let pos = ((x - self.min) / self.step).clamp(0.0, last as f64);
        let nearest = pos.round() as usize;
        if (pos - nearest as f64).abs() <= 1e-9 {
            match nearest {
                0 => (0, 1),
                m if m == last => (last - 1, last),
                m => (m - 1, m + 1),
            }
        } else {
            let lo = (pos.floor() as usize).min(last - 1);
            (lo, lo + 1)
        }
    }
}

fn eval_at<P: Predictor + ?Sized>(f: &P, row: &[f64], j: usize, value: f64) -> Result<f64> {
    let mut x = row.to_vec();
    x[j] = value;
    f.predict(&x)
        .map_err(|e| Error::Predictor(format!("ICE evaluation at feature {j} = {value}: {e}")))
}

/// Sweeps feature `j` of instance `i` over an equally spaced grid spanning the
/// observed range of the feature in `table`.
pub fn ice_curve<P: Predictor + ?Sized>(f: &P, table: &DataTable, i: usize, j: usize, grid_size: usize) -> Result<IceCurve> {
    if i >= table.n() {
        return Err(Error::IndexOutOfRange { index: i, len: table.n() });
    }
    let grid = Grid::for_feature(table, j, grid_size)?;
    let row = table.row(i).to_vec();
    let points: Vec<f64> = (0..grid.size).map(|k| grid.point(k)).collect();
    let values = points
        .iter()
        .map(|&g| eval_at(f, &row, j, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(IceCurve {
        instance: i,
        feature: j,
        grid: points,
        values,
    })
}

/// Slope of the curve at `x` by finite difference over the nearest grid
/// points, and the effect `slope * x`.
pub fn ice_effect(curve: &IceCurve, x: f64) -> IceEffect {
    let size = curve.grid.len();
    let min = curve.grid[0];
    let max = curve.grid[size - 1];
    if !(max > min) {
        return IceEffect {
            slope: 0.0,
            effect: 0.0,
            degenerate: true,
        };
    }
    let grid = Grid {
        min,
        step: (max - min) / (size - 1) as f64,
        size,
    };
    let (a, b) = grid.stencil(x);
    let slope = (curve.values[b] - curve.values[a]) / (curve.grid[b] - curve.grid[a]);
    IceEffect {
        slope,
        effect: slope * x,
        degenerate: false,
    }
}

/// ICE slopes and effects for every instance and feature, evaluating only the
/// grid points each finite difference needs.
pub fn ice_effects<P: Predictor + ?Sized>(f: &P, table: &DataTable, grid_size: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, d) = (table.n(), table.d());
    let grids = (0..d).map(|j| Grid::for_feature(table, j, grid_size)).collect::<Result<Vec<_>>>()?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = table.row(i).to_vec();
            let mut out = Vec::with_capacity(d);
            for (j, grid) in grids.iter().enumerate() {
                if !(grid.step > 0.0) {
                    out.push((0.0, 0.0));
                    continue;
                }
                let (a, b) = grid.stencil(row[j]);
                let (ga, gb) = (grid.point(a), grid.point(b));
                let slope = (eval_at(f, &row, j, gb)? - eval_at(f, &row, j, ga)?) / (gb - ga);
                out.push((slope, slope * row[j]));
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let slopes = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j].0);
    let effects = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j].1);
    Ok((slopes, effects))
}

/// Long-format CSV: instance, feature, grid value, prediction.
pub fn write_curves_csv<W: Write>(curves: &[IceCurve], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["instance", "feature", "grid", "prediction"])?;
    for c in curves {
        for (g, v) in c.grid.iter().zip(&c.values) {
            w.write_record([c.instance.to_string(), c.feature.to_string(), g.to_string(), v.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnPredictor;
    use ndarray::{array, Array1};
    use std::f64::consts::PI;

    fn unit_table(n: usize, d: usize) -> DataTable {
        let x = Array2::from_shape_fn((n, d), |(i, j)| ((i * (j + 3)) % n) as f64 / (n - 1) as f64);
        let mut x = x;
        x.row_mut(0).fill(0.0);
        x.row_mut(n - 1).fill(1.0);
        x[[1, 0]] = 0.3;
        DataTable::new(x, Array1::zeros(n), (0..d).map(|j| format!("x{j}")).collect()).unwrap()
    }

    #[test]
    fn ignored_feature_is_flat() {
        let t = unit_table(11, 3);
        let f = FnPredictor::new(3, |x: &[f64]| 2.0 * x[0] + 1.0);
        let c = ice_curve(&f, &t, 4, 1, 7).unwrap();
        let fx = f.predict(t.row(4).as_slice().unwrap()).unwrap();
        assert!(c.values.iter().all(|&v| v == fx));
        assert_eq!(ice_effect(&c, t.row(4)[1]).effect, 0.0);
    }

    #[test]
    fn identity_and_square() {
        let t = unit_table(11, 2);
        let f = FnPredictor::new(2, |x: &[f64]| x[0]);
        let c = ice_curve(&f, &t, 2, 0, 3).unwrap();
        assert_eq!(c.grid, vec![0.0, 0.5, 1.0]);
        assert_eq!(c.values, vec![0.0, 0.5, 1.0]);

        let sq = FnPredictor::new(2, |x: &[f64]| x[0] * x[0]);
        let c = ice_curve(&sq, &t, 2, 0, 101).unwrap();
        for (g, v) in c.grid.iter().zip(&c.values) {
            assert!((v - g * g).abs() < 1e-12);
        }
        let e = ice_effect(&c, 0.3);
        assert!((e.slope - 0.6).abs() < 1e-3);
        assert!((e.effect - 0.18).abs() < 1e-3);
    }

    #[test]
    fn linear_curve_effect_is_exact() {
        let t = unit_table(11, 2);
        let f = FnPredictor::new(2, |x: &[f64]| 3.0 * x[1] - 1.0);
        let c = ice_curve(&f, &t, 5, 1, 51).unwrap();
        for x in [0.0, 0.123, 0.5, 1.0] {
            let e = ice_effect(&c, x);
            assert!((e.slope - 3.0).abs() < 1e-12);
            assert!((e.effect - 3.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_grid() {
        let t = DataTable::new(array![[0.5, 0.1], [0.5, 0.9]], array![0.0, 0.0], vec!["a".into(), "b".into()]).unwrap();
        let f = FnPredictor::new(2, |x: &[f64]| x[0]);
        let c = ice_curve(&f, &t, 0, 0, 5).unwrap();
        let e = ice_effect(&c, 0.5);
        assert!(e.degenerate);
        assert_eq!(e.effect, 0.0);
        assert!(ice_curve(&f, &t, 0, 0, 1).is_err());
    }

    #[test]
    fn sine_slopes_converge_quadratically() {
        let t = unit_table(11, 1);
        let f = FnPredictor::new(1, |x: &[f64]| (2.0 * PI * x[0]).sin());
        let coarse = ice_curve(&f, &t, 3, 0, 41).unwrap();
        let fine = ice_curve(&f, &t, 3, 0, 81).unwrap();
        let step = 1.0 / 40.0;
        // Central-difference error is at most |f'''| h² / 6 with |f'''| <= (2π)³.
        let bound = (2.0 * PI).powi(3) * step * step / 6.0;
        for &x in &[0.25, 0.4, 0.6] {
            let exact = 2.0 * PI * (2.0 * PI * x).cos();
            let ec = (ice_effect(&coarse, x).slope - exact).abs();
            let ef = (ice_effect(&fine, x).slope - exact).abs();
            let diff = (ice_effect(&coarse, x).slope - ice_effect(&fine, x).slope).abs();
            assert!(diff < bound, "x={x}: diff {diff}");
            assert!(ef <= ec + 1e-12);
        }
    }

    #[test]
    fn batch_effects_match_full_curves() {
        let t = unit_table(13, 3);
        let f = FnPredictor::new(3, |x: &[f64]| x[0] * x[1] + (3.0 * x[2]).sin());
        let (slopes, effects) = ice_effects(&f, &t, 21).unwrap();
        for i in 0..13 {
            for j in 0..3 {
                let c = ice_curve(&f, &t, i, j, 21).unwrap();
                let e = ice_effect(&c, t.row(i)[j]);
                assert!((slopes[[i, j]] - e.slope).abs() < 1e-12);
                assert!((effects[[i, j]] - e.effect).abs() < 1e-12);
            }
        }
    }
}
