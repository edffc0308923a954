//! Levenberg–Marquardt on a residual vector with a forward-difference
//! Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub struct LmOptions {
    pub max_iter: usize,
    pub step: f64,
    /// Relative cost decrease below which iteration stops.
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 60, step: 1e-6, tol: 1e-12 }
    }
}

pub struct LmOutcome {
    pub x: Vec<f64>,
    /// Stopped on the tolerance rather than the iteration cap.
    pub converged: bool,
}

fn half_ss(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimizes `½‖f(x)‖²`. `f` returns `Err` to abort (cancellation).
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LmOptions) -> Result<LmOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = f(&x)?;
    let mut cost = half_ss(&r);
    let mut lambda: f64 = 1e-3;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        if cost == 0.0 {
            converged = true;
            break;
        }
        let m = r.len();
        let mut jac = DMatrix::zeros(m, n);
        for k in 0..n {
            let h = opts.step * x[k].abs().max(1.0);
            let mut xp = x.clone();
            xp[k] += h;
            let rp = f(&xp)?;
            for i in 0..m {
                jac[(i, k)] = (rp[i] - r[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let scale: Vec<f64> = (0..n).map(|k| jac.column(k).norm().max(1e-12)).collect();
        let mut improved = false;
        while lambda < 1e10 {
            // Solve [J; √λ·D] δ = [−r; 0] by QR, which avoids squaring the
            // condition number of J.
            let mut a = DMatrix::zeros(m + n, n);
            a.view_mut((0, 0), (m, n)).copy_from(&jac);
            for k in 0..n {
                a[(m + k, k)] = lambda.sqrt() * scale[k];
            }
            let mut b = DVector::zeros(m + n);
            b.rows_mut(0, m).copy_from(&(-&rv));
            let qr = a.qr();
            let rhs = qr.q().transpose() * b;
            let Some(delta) = qr.r().solve_upper_triangular(&rhs) else {
                lambda *= 10.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let rn = f(&xn)?;
            let cn = half_ss(&rn);
            if cn.is_finite() && cn < cost {
                let rel = (cost - cn) / cost;
                x = xn;
                r = rn;
                cost = cn;
                lambda = (lambda / 3.0).max(1e-12);
                improved = rel > opts.tol;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            converged = true;
            break;
        }
    }
    if !cost.is_finite() {
        return Err(Error::Fit("non-finite residuals".into()));
    }
    Ok(LmOutcome { x, converged })
}
