//! Piecewise-linear ("hat") basis over the grid, used for α(f) knots and to
//! split spectral shapes into a smooth part and a ripple part.

use nalgebra::{DMatrix, DVector};

use crate::spectral::FrequencyGrid;

/// Number of α(f) knots per span.
pub const ALPHA_KNOTS: usize = 5;

/// `n` knots spread uniformly from the first to the last slot center.
pub fn knot_frequencies(grid: &FrequencyGrid, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![grid.f_mid()];
    }
    let (lo, hi) = (grid.f_min(), grid.f_max());
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// `basis[k][i]`: weight of knot `k` at slot `i`.
pub fn hat_basis(grid: &FrequencyGrid, knots: &[f64]) -> Vec<Vec<f64>> {
    let freqs = grid.frequencies();
    (0..knots.len())
        .map(|k| {
            freqs
                .iter()
                .map(|&f| {
                    let mut y = vec![0.0; knots.len()];
                    y[k] = 1.0;
                    let pts: Vec<(f64, f64)> = knots.iter().cloned().zip(y).collect();
                    crate::line::interp_clamped(&pts, f).0
                })
                .collect()
        })
        .collect()
}

/// Least-squares coefficients of `values` on `basis` and the residual.
pub fn project(values: &[f64], basis: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = values.len();
    let m = basis.len();
    let a = DMatrix::from_fn(n, m, |i, k| basis[k][i]);
    let y = DVector::from_column_slice(values);
    let coeffs =
        (a.transpose() * &a).cholesky().map(|c| c.solve(&(a.transpose() * &y))).unwrap_or_else(|| DVector::zeros(m));
    let fitted = &a * &coeffs;
    let residual = (0..n).map(|i| values[i] - fitted[i]).collect();
    (coeffs.iter().copied().collect(), residual)
}
