//! Coupling-strength estimation from binarized dynamics.
//!
//! Each series is reduced to the sign of its first difference; a
//! penalized logistic regression of s_i(t+1) on the full state vector
//! s(t) then gives a directed coupling weight |w_j| for every pair.
//! This is a documented approximation of maximum-likelihood kinetic
//! reconstruction; the exact variant is out of scope.

use ndarray::{Array2, ArrayView2};

use super::AdjacencyMatrix;
use crate::error::{Error, Result};
use crate::linalg::solve_ridge;

/// L2 penalty on coupling coefficients (the intercept is free); also
/// what caps the weights under perfect separation.
pub const L2_PENALTY: f64 = 1e-2;
const NEWTON_ITERS: usize = 50;
const GRAD_TOL: f64 = 1e-10;

/// Entry (j, i) = |coefficient of s_j| in node i's logistic model.
pub fn mle_matrix(y: ArrayView2<'_, f64>) -> Result<AdjacencyMatrix> {
    let (t, n) = y.dim();
    if t < 50 {
        return Err(Error::Config(format!(
            "coupling reconstruction needs at least 50 samples, got {t}"
        )));
    }
    // s(t) = sign of y(t) - y(t-1), for t = 1..T-1  (+1 when positive,
    // else -1)
    let steps = t - 1;
    let mut s = vec![0.0f64; steps * n];
    for k in 1..t {
        for j in 0..n {
            s[(k - 1) * n + j] = if y[(k, j)] - y[(k - 1, j)] > 0.0 { 1.0 } else { -1.0 };
        }
    }
    let rows = steps - 1; // predict s(t+1) from s(t)
    let m = n + 1; // intercept last
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let w = fit_logistic(&s, n, rows, i, m);
        for j in 0..n {
            if j != i {
                out[(j, i)] = w[j].abs();
            }
        }
    }
    AdjacencyMatrix::new(out, true)
}

/// Newton/IRLS for: min (1/M) sum log(1+exp(-y w'x)) + L2 * |w_coupling|^2.
fn fit_logistic(s: &[f64], n: usize, rows: usize, target: usize, m: usize) -> Vec<f64> {
    let mf = rows as f64;
    let mut w = vec![0.0f64; m];
    for _ in 0..NEWTON_ITERS {
        let mut grad = vec![0.0f64; m];
        let mut hess = vec![0.0f64; m * m];
        for r in 0..rows {
            let x = &s[r * n..(r + 1) * n];
            let label = s[(r + 1) * n + target];
            let mut z = w[m - 1];
            for j in 0..n {
                z += w[j] * x[j];
            }
            let p = 1.0 / (1.0 + (-z).exp());
            let yy = if label > 0.0 { 1.0 } else { 0.0 };
            let g = p - yy;
            let h = (p * (1.0 - p)).max(1e-9);
            for a in 0..n {
                grad[a] += g * x[a] / mf;
            }
            grad[m - 1] += g / mf;
            for a in 0..n {
                let ha = h * x[a] / mf;
                for b in a..n {
                    hess[a * m + b] += ha * x[b];
                }
                hess[a * m + (m - 1)] += ha;
            }
            hess[(m - 1) * m + (m - 1)] += h / mf;
        }
        for a in 0..n {
            grad[a] += 2.0 * L2_PENALTY * w[a];
            hess[a * m + a] += 2.0 * L2_PENALTY;
        }
        for a in 0..m {
            for b in 0..a {
                hess[a * m + b] = hess[b * m + a];
            }
        }
        let gnorm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < GRAD_TOL {
            break;
        }
        let step = solve_ridge(&hess, &grad, m, 1e-10);
        for a in 0..m {
            w[a] -= step[a];
        }
    }
    w
}
