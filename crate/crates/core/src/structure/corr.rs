//! Pairwise Pearson correlation estimator.

use ndarray::{Array2, ArrayView2};

use super::AdjacencyMatrix;
use crate::error::{Error, Result};

/// Signed Pearson correlation matrix with diagonal 1. A zero-variance
/// series correlates 0 with everything (and 1 with itself).
pub(crate) fn pearson_matrix(y: ArrayView2<'_, f64>) -> Array2<f64> {
    let (t, n) = y.dim();
    let tf = t as f64;
    let means: Vec<f64> = (0..n).map(|j| y.column(j).sum() / tf).collect();
    let mut centered = y.to_owned();
    for j in 0..n {
        centered.column_mut(j).mapv_inplace(|v| v - means[j]);
    }
    let norms: Vec<f64> = (0..n)
        .map(|j| centered.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut r = Array2::zeros((n, n));
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = centered
                    .column(i)
                    .iter()
                    .zip(centered.column(j).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

/// Absolute pairwise correlation with zero diagonal, per column of `y`.
pub fn corr_matrix(y: ArrayView2<'_, f64>) -> Result<AdjacencyMatrix> {
    let (t, _) = y.dim();
    if t < 3 {
        return Err(Error::Config(format!(
            "correlation needs at least 3 samples, got {t}"
        )));
    }
    let mut r = pearson_matrix(y);
    let n = r.nrows();
    for i in 0..n {
        r[(i, i)] = 0.0;
    }
    r.mapv_inplace(f64::abs);
    AdjacencyMatrix::new(r, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;

    #[test]
    fn perfect_linear_dependence() {
        let t = 50;
        let mut y = Array2::zeros((t, 2));
        for i in 0..t {
            let v = (i as f64).sin();
            y[(i, 0)] = v;
            y[(i, 1)] = 2.0 * v + 1.0;
        }
        let a = corr_matrix(y.view()).unwrap();
        assert!((a.weights()[(0, 1)] - 1.0).abs() < 1e-12);
        assert_eq!(a.weights()[(0, 0)], 0.0);
    }

    #[test]
    fn constant_series_row_is_zero() {
        let t = 30;
        let mut y = Array2::zeros((t, 3));
        for i in 0..t {
            y[(i, 0)] = 5.0; // constant
            y[(i, 1)] = (i as f64).cos();
            y[(i, 2)] = i as f64;
        }
        let a = corr_matrix(y.view()).unwrap();
        for j in 0..3 {
            assert_eq!(a.weights()[(0, j)], 0.0);
            assert_eq!(a.weights()[(j, 0)], 0.0);
        }
        assert!(a.weights()[(1, 2)] > 0.0);
    }

    #[test]
    fn matches_covariance_formula_oracle() {
        // independent textbook implementation: r = cov(x,y)/(sd(x) sd(y))
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let t = 200;
        let mut y = Array2::zeros((t, 3));
        for i in 0..t {
            for j in 0..3 {
                y[(i, j)] = rng.random_range(-1.0..1.0) + 0.3 * (i as f64 * 0.05).sin();
            }
        }
        let a = corr_matrix(y.view()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let xi: Vec<f64> = y.column(i).to_vec();
                let xj: Vec<f64> = y.column(j).to_vec();
                let mx = xi.iter().sum::<f64>() / t as f64;
                let my = xj.iter().sum::<f64>() / t as f64;
                let mut cov = 0.0;
                let mut vx = 0.0;
                let mut vy = 0.0;
                for k in 0..t {
                    cov += (xi[k] - mx) * (xj[k] - my);
                    vx += (xi[k] - mx) * (xi[k] - mx);
                    vy += (xj[k] - my) * (xj[k] - my);
                }
                let r = (cov / (vx.sqrt() * vy.sqrt())).abs();
                assert!((a.weights()[(i, j)] - r).abs() < 1e-12);
            }
        }
    }
}
