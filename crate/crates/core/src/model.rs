use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A black-box regression model queried one feature vector at a time.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;

    fn predict(&self, x: &[f64]) -> Result<f64>;

    fn predict_rows(&self, rows: &Array2<f64>) -> Result<Array1<f64>> {
        let out: Result<Vec<f64>> = (0..rows.nrows())
            .into_par_iter()
            .map(|i| self.predict(&rows.row(i).to_vec()))
            .collect();
        Ok(Array1::from(out?))
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        (**self).predict(x)
    }
}

/// Wraps a plain function of the feature vector.
pub struct FnPredictor<F> {
    d: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(d: usize, f: F) -> Self {
        Self { d, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn n_features(&self) -> usize {
        self.d
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.d, x.len())?;
        let y = (self.f)(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Predictor(format!("non-finite output {y}")))
        }
    }
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: "feature vector",
            expected,
            actual,
        })
    }
}
