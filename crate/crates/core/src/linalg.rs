//! Small dense symmetric solves for normal equations.

use nalgebra::{DMatrix, DVector};

/// Condition-number estimate above which the LDLᵀ path is abandoned.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    /// The system was singular or too ill-conditioned for LDLᵀ and was solved
    /// through the minimum-norm pseudo-inverse instead.
    pub degenerate: bool,
}

/// Solves `a x = b` for a symmetric positive semi-definite `a` given row-major.
///
/// The matrix is first equilibrated to unit diagonal and factored as LDLᵀ.
/// If a pivot is non-positive or the pivot ratio exceeds [`CONDITION_LIMIT`],
/// the minimum-norm solution is taken from an SVD of the original matrix.
pub fn solve_symmetric(a: &[f64], b: &[f64]) -> Solution {
    let p = b.len();
    debug_assert_eq!(a.len(), p * p);
    if p == 0 {
        return Solution {
            x: Vec::new(),
            degenerate: false,
        };
    }
    if let Some(x) = ldlt_solve(a, b) {
        return Solution { x, degenerate: false };
    }
    Solution {
        x: min_norm_solve(a, b),
        degenerate: true,
    }
}

fn ldlt_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    let mut scale = vec![0.0; p];
    for k in 0..p {
        let diag = a[k * p + k];
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        scale[k] = diag.sqrt().recip();
    }
    // l is unit lower triangular (stored below the diagonal), dvec the pivots.
    let mut l = vec![0.0; p * p];
    let mut dvec = vec![0.0; p];
    for j in 0..p {
        let mut dj = a[j * p + j] * scale[j] * scale[j];
        for k in 0..j {
            dj -= l[j * p + k] * l[j * p + k] * dvec[k];
        }
        if dj <= 0.0 || !dj.is_finite() {
            return None;
        }
        dvec[j] = dj;
        for i in j + 1..p {
            let mut v = a[i * p + j] * scale[i] * scale[j];
            for k in 0..j {
                v -= l[i * p + k] * l[j * p + k] * dvec[k];
            }
            l[i * p + j] = v / dj;
        }
    }
    let max = dvec.iter().copied().fold(0.0, f64::max);
    let min = dvec.iter().copied().fold(f64::INFINITY, f64::min);
    if max / min > CONDITION_LIMIT {
        return None;
    }
    // Forward, diagonal, backward substitution on the scaled system.
    let mut z: Vec<f64> = b.iter().zip(&scale).map(|(bi, s)| bi * s).collect();
    for i in 0..p {
        for k in 0..i {
            z[i] -= l[i * p + k] * z[k];
        }
    }
    for i in 0..p {
        z[i] /= dvec[i];
    }
    for i in (0..p).rev() {
        for k in i + 1..p {
            z[i] -= l[k * p + i] * z[k];
        }
    }
    Some(z.iter().zip(&scale).map(|(zi, s)| zi * s).collect())
}

fn min_norm_solve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let p = b.len();
    let m = DMatrix::from_row_slice(p, p, a);
    let rhs = DVector::from_column_slice(b);
    let svd = m.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return vec![0.0; p];
    }
    let eps = smax * p as f64 * f64::EPSILON * 1e4;
    match svd.solve(&rhs, eps) {
        Ok(x) => x.iter().copied().collect(),
        Err(_) => vec![0.0; p],
    }
}
