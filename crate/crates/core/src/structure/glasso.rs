//! Graphical lasso: L1-penalized sparse precision estimation by
//! blockwise coordinate descent on the empirical correlation matrix.

use ndarray::{Array2, ArrayView2};

use super::corr::pearson_matrix;
use super::AdjacencyMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.1;
const MAX_SWEEPS: usize = 200;
const SWEEP_TOL: f64 = 1e-4;
const CD_MAX_ITERS: usize = 100;
const CD_TOL: f64 = 1e-7;

/// Result of a graphical-lasso run; `converged` is false when the sweep
/// budget ran out (the best iterate is still returned).
pub struct GlassoFit {
    pub matrix: AdjacencyMatrix,
    pub converged: bool,
    pub sweeps: usize,
}

/// |precision| off-diagonal with zero diagonal, symmetrized. Operating
/// on the correlation matrix makes `lambda` unit-free.
pub fn glasso_matrix(y: ArrayView2<'_, f64>, lambda: f64) -> Result<GlassoFit> {
    if lambda <= 0.0 {
        return Err(Error::Config("glasso lambda must be positive".into()));
    }
    let s = pearson_matrix(y);
    glasso_from_correlation(&s, lambda)
}

/// Core solver, exposed for tests that construct the correlation
/// directly.
pub fn glasso_from_correlation(s: &Array2<f64>, lambda: f64) -> Result<GlassoFit> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::Dimension("correlation matrix must be square".into()));
    }
    // working covariance estimate W = S + lambda I
    let mut w = s.clone();
    for i in 0..n {
        w[(i, i)] += lambda;
    }
    let mut betas = vec![vec![0.0f64; n - 1]; n];
    let mut converged = false;
    let mut sweeps = 0;
    let offdiag_count = ((n * n - n).max(1)) as f64;
    for sweep in 0..MAX_SWEEPS {
        sweeps = sweep + 1;
        let mut change_sum = 0.0f64;
        for col in 0..n {
            // indices excluding `col`
            let others: Vec<usize> = (0..n).filter(|&k| k != col).collect();
            let beta = &mut betas[col];
            // lasso on: min 1/2 b' W11 b - b' s12 + lambda |b|_1
            for _ in 0..CD_MAX_ITERS {
                let mut delta = 0.0f64;
                for (idx, &ka) in others.iter().enumerate() {
                    let mut resid = s[(ka, col)];
                    for (b, &kb) in others.iter().enumerate() {
                        if idx != b {
                            resid -= w[(ka, kb)] * beta[b];
                        }
                    }
                    let denom = w[(ka, ka)];
                    let new = soft_threshold(resid, lambda) / denom;
                    delta = delta.max((new - beta[idx]).abs());
                    beta[idx] = new;
                }
                if delta < CD_TOL {
                    break;
                }
            }
            // w12 = W11 * beta
            for (a, &ka) in others.iter().enumerate() {
                let mut v = 0.0;
                for (b, &kb) in others.iter().enumerate() {
                    v += w[(ka, kb)] * beta[b];
                }
                change_sum += 2.0 * (w[(ka, col)] - v).abs();
                w[(ka, col)] = v;
                w[(col, ka)] = v;
            }
        }
        if change_sum / offdiag_count < SWEEP_TOL {
            converged = true;
            break;
        }
    }
    // recover the precision matrix from the final W and betas
    let mut theta = Array2::zeros((n, n));
    for col in 0..n {
        let others: Vec<usize> = (0..n).filter(|&k| k != col).collect();
        let beta = &betas[col];
        let mut w12_beta = 0.0;
        for (a, &ka) in others.iter().enumerate() {
            w12_beta += w[(ka, col)] * beta[a];
        }
        let theta_cc = 1.0 / (w[(col, col)] - w12_beta).max(1e-12);
        theta[(col, col)] = theta_cc;
        for (a, &ka) in others.iter().enumerate() {
            theta[(ka, col)] = -beta[a] * theta_cc;
        }
    }
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(i, j)] = 0.5 * (theta[(i, j)].abs() + theta[(j, i)].abs());
            }
        }
    }
    // exact zeros survive the symmetrization; tiny numeric dust does not
    // count as an edge
    out.mapv_inplace(|v| if v < 1e-12 { 0.0 } else { v });
    Ok(GlassoFit {
        matrix: AdjacencyMatrix::new(out, false)?,
        converged,
        sweeps,
    })
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;

    #[test]
    fn independent_series_give_empty_graph() {
        // exactly diagonal empirical correlation via orthogonal columns
        let t = 64usize;
        let mut y = Array2::zeros((t, 3));
        for i in 0..t {
            let phase = i as f64 / t as f64 * std::f64::consts::TAU;
            y[(i, 0)] = phase.sin();
            y[(i, 1)] = (2.0 * phase).sin();
            y[(i, 2)] = (3.0 * phase).sin();
        }
        let s = pearson_matrix(y.view());
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!(s[(i, j)].abs() < 1e-12);
                }
            }
        }
        let fit = glasso_matrix(y.view(), 0.2).unwrap();
        assert!(fit.converged);
        assert!(fit.matrix.weights().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn huge_lambda_shrinks_everything() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut y = Array2::zeros((200, 4));
        for v in y.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        for i in 0..200 {
            let c = y[(i, 0)];
            y[(i, 1)] += 0.8 * c;
            y[(i, 2)] += 0.5 * c;
        }
        let fit = glasso_matrix(y.view(), 1e3).unwrap();
        assert!(fit.matrix.weights().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chain_drops_conditionally_independent_pair() {
        // X -> Y -> Z with unit variances: partial correlation of (X, Z)
        // given Y is zero, so the population precision has a zero at (X, Z)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let t = 6000;
        let r = 0.3;
        let noise = (1.0f64 - r * r).sqrt();
        let mut y = Array2::zeros((t, 3));
        for i in 0..t {
            let x = gauss(&mut rng);
            let yy = r * x + noise * gauss(&mut rng);
            let z = r * yy + noise * gauss(&mut rng);
            y[(i, 0)] = x;
            y[(i, 1)] = yy;
            y[(i, 2)] = z;
        }
        // oracle: invert the population covariance of the chain
        let (cxy, cyz) = (r, r);
        let cxz = cxy * cyz;
        let cov = [1.0, cxy, cxz, cxy, 1.0, cyz, cxz, cyz, 1.0];
        let prec = crate::linalg::invert(&cov, 3).unwrap();
        assert!(prec[2].abs() < 1e-12, "population precision (X,Z) = {}", prec[2]);
        assert!(prec[1].abs() > 0.1 && prec[5].abs() > 0.1);

        let fit = glasso_matrix(y.view(), 0.1).unwrap();
        let w = fit.matrix.weights();
        assert_eq!(w[(0, 2)], 0.0, "(X,Z) should be shrunk to zero, got {}", w[(0, 2)]);
        assert!(w[(0, 1)] > 0.05, "(X,Y) should survive, got {}", w[(0, 1)]);
        assert!(w[(1, 2)] > 0.05, "(Y,Z) should survive, got {}", w[(1, 2)]);
    }

    fn gauss(rng: &mut impl Rng) -> f64 {
        // Box-Muller
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
