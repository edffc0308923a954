//! Nelder–Mead simplex search with an evaluation budget.

use crate::error::Result;

pub struct SimplexOutcome {
    pub x: Vec<f64>,
    pub converged: bool,
}

/// Minimizes `f` from `x0` with initial edge lengths `scale`. Stops when
/// the spread of simplex values drops below `ftol` or after `max_evals`.
pub fn minimize<F>(mut f: F, x0: &[f64], scale: &[f64], max_evals: usize, ftol: f64) -> Result<SimplexOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut p = x0.to_vec();
        p[k] += scale[k];
        pts.push(p);
    }
    let mut vals = Vec::with_capacity(n + 1);
    for p in &pts {
        vals.push(f(p)?);
    }
    let mut evals = n + 1;
    let mut converged = false;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if vals[n] - vals[0] <= ftol * (vals[0].abs() + 1e-300) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| pts[..n].iter().map(|p| p[k]).sum::<f64>() / n as f64).collect();
        let xr = lerp(&centroid, &pts[n], -1.0);
        let fr = f(&xr)?;
        evals += 1;
        if fr < vals[0] {
            let xe = lerp(&centroid, &pts[n], -2.0);
            let fe = f(&xe)?;
            evals += 1;
            (pts[n], vals[n]) = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < vals[n - 1] {
            (pts[n], vals[n]) = (xr, fr);
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = lerp(&centroid, &pts[n], -0.5);
                let fc = f(&xc)?;
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &pts[n], 0.5);
                let fc = f(&xc)?;
                (xc, fc)
            };
            evals += 1;
            if fc < vals[n].min(fr) {
                (pts[n], vals[n]) = (xc, fc);
            } else {
                for i in 1..=n {
                    pts[i] = lerp(&pts[0], &pts[i], 0.5);
                    vals[i] = f(&pts[i])?;
                    evals += 1;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    Ok(SimplexOutcome { x: pts[best].clone(), converged })
}
