//! Correlation spanning tree: minimum spanning tree over the
//! correlation-derived metric d(i,j) = sqrt(2(1 - r(i,j))).

use ndarray::{Array2, ArrayView2};

use super::corr::pearson_matrix;
use super::AdjacencyMatrix;
use crate::error::{Error, Result};

/// MST edges carry weight 1 - d/2 (in [0,1]); all other entries are 0.
/// Output is symmetric with an empty diagonal.
pub fn cst_matrix(y: ArrayView2<'_, f64>) -> Result<AdjacencyMatrix> {
    let (t, n) = y.dim();
    if t < 3 {
        return Err(Error::Config(format!(
            "spanning tree needs at least 3 samples, got {t}"
        )));
    }
    let r = pearson_matrix(y);
    let mut dist = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                dist[(i, j)] = (2.0 * (1.0 - r[(i, j)])).max(0.0).sqrt();
            }
        }
    }
    let edges = prim_mst(&dist);
    let mut w = Array2::zeros((n, n));
    for (i, j) in edges {
        let weight = 1.0 - dist[(i, j)] / 2.0;
        w[(i, j)] = weight;
        w[(j, i)] = weight;
    }
    AdjacencyMatrix::new(w, false)
}

/// Prim's algorithm over a dense distance matrix. Ties resolve to the
/// lowest-index node, which keeps the output deterministic.
fn prim_mst(dist: &Array2<f64>) -> Vec<(usize, usize)> {
    let n = dist.nrows();
    let mut in_tree = vec![false; n];
    let mut best_dist = vec![f64::INFINITY; n];
    let mut best_from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    in_tree[0] = true;
    for j in 1..n {
        best_dist[j] = dist[(0, j)];
    }
    for _ in 1..n {
        let mut pick = usize::MAX;
        let mut pick_d = f64::INFINITY;
        for j in 0..n {
            if !in_tree[j] && best_dist[j] < pick_d {
                pick_d = best_dist[j];
                pick = j;
            }
        }
        if pick == usize::MAX {
            break;
        }
        in_tree[pick] = true;
        edges.push((best_from[pick].min(pick), best_from[pick].max(pick)));
        for j in 0..n {
            if !in_tree[j] && dist[(pick, j)] < best_dist[j] {
                best_dist[j] = dist[(pick, j)];
                best_from[j] = pick;
            }
        }
    }
    edges
}
