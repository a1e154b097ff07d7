//! Pairwise Granger-causality scores from nested autoregressions.

use ndarray::{Array2, ArrayView2};

use super::AdjacencyMatrix;
use crate::error::{Error, Result};
use crate::linalg::solve_ridge;

const RIDGE: f64 = 1e-8;
const RSS_FLOOR: f64 = 1e-300;

/// Entry (j, i) = max(0, log(e_i / e_ij)) where e_i is the residual sum
/// of squares of an order-`p` autoregression of series i on its own
/// lags and e_ij additionally includes `p` lags of series j. Both fits
/// use least squares on ridge-jittered normal equations.
pub fn granger_matrix(y: ArrayView2<'_, f64>, p: usize) -> Result<AdjacencyMatrix> {
    let (t, n) = y.dim();
    if p == 0 {
        return Err(Error::Config("granger lag must be at least 1".into()));
    }
    if t < 10 * p {
        return Err(Error::Config(format!(
            "granger causality needs T >= 10*lag ({}), got {t}",
            10 * p
        )));
    }
    let rows = t - p; // usable regression rows, target times p..T
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let e_i = fit_rss(y, p, rows, i, None);
        for j in 0..n {
            if j == i {
                continue;
            }
            let e_ij = fit_rss(y, p, rows, i, Some(j));
            let score = (e_i.max(RSS_FLOOR) / e_ij.max(RSS_FLOOR)).ln().max(0.0);
            out[(j, i)] = score;
        }
    }
    AdjacencyMatrix::new(out, true)
}

/// RSS of the least-squares autoregression of series `target` on an
/// intercept, its own `p` lags and (optionally) `p` lags of `extra`.
fn fit_rss(y: ArrayView2<'_, f64>, p: usize, rows: usize, target: usize, extra: Option<usize>) -> f64 {
    let m = 1 + p + if extra.is_some() { p } else { 0 };
    let mut xtx = vec![0.0f64; m * m];
    let mut xty = vec![0.0f64; m];
    let mut design = vec![0.0f64; m];
    for r in 0..rows {
        let t = r + p;
        fill_design(y, p, target, extra, t, &mut design);
        let yv = y[(t, target)];
        for a in 0..m {
            let da = design[a];
            xty[a] += da * yv;
            for b in a..m {
                xtx[a * m + b] += da * design[b];
            }
        }
    }
    for a in 0..m {
        for b in 0..a {
            xtx[a * m + b] = xtx[b * m + a];
        }
    }
    let beta = solve_ridge(&xtx, &xty, m, RIDGE);
    let mut rss = 0.0;
    for r in 0..rows {
        let t = r + p;
        fill_design(y, p, target, extra, t, &mut design);
        let mut pred = 0.0;
        for a in 0..m {
            pred += beta[a] * design[a];
        }
        let e = y[(t, target)] - pred;
        rss += e * e;
    }
    rss
}

fn fill_design(
    y: ArrayView2<'_, f64>,
    p: usize,
    target: usize,
    extra: Option<usize>,
    t: usize,
    design: &mut [f64],
) {
    design[0] = 1.0;
    for l in 1..=p {
        design[l] = y[(t - l, target)];
    }
    if let Some(j) = extra {
        for l in 1..=p {
            design[p + l] = y[(t - l, j)];
        }
    }
}
