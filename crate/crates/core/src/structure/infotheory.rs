//! Plug-in mutual information and transfer entropy with equal-frequency
//! (quantile) binning. Rank-based bin assignment makes both estimators
//! invariant under positive rescaling of the inputs.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};

use super::AdjacencyMatrix;
use crate::error::{Error, Result};

/// Quantile bin assignment for one series. Equal values always land in
/// the same bin; when the series has fewer distinct values than `bins`,
/// the bin count drops to the distinct-value count.
pub(crate) fn quantile_bins(x: &[f64], bins: usize) -> (Vec<u16>, usize) {
    let t = x.len();
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut distinct = 1usize;
    for k in 1..t {
        if sorted[k] != sorted[k - 1] {
            distinct += 1;
        }
    }
    let b = bins.min(distinct).max(1);
    // edge j sits at the value of rank floor(j*T/b); a point belongs to
    // bin = number of edges at or below it
    let edges: Vec<f64> = (1..b).map(|j| sorted[j * t / b]).collect();
    let assign: Vec<u16> = x
        .iter()
        .map(|v| edges.iter().take_while(|e| *v >= **e).count() as u16)
        .collect();
    (assign, b)
}

/// Symmetric plug-in mutual information in nats, zero diagonal.
pub fn mi_matrix(y: ArrayView2<'_, f64>, bins: usize) -> Result<AdjacencyMatrix> {
    let (t, n) = y.dim();
    if bins < 2 {
        return Err(Error::Config("mutual information needs at least 2 bins".into()));
    }
    if t < 10 * bins {
        return Err(Error::Config(format!(
            "mutual information needs T >= 10*bins ({}), got {t}",
            10 * bins
        )));
    }
    let binned: Vec<(Vec<u16>, usize)> = (0..n)
        .map(|j| quantile_bins(y.column(j).as_standard_layout().as_slice().unwrap(), bins))
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = mutual_information(&binned[i].0, binned[i].1, &binned[j].0, binned[j].1);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    AdjacencyMatrix::new(out, false)
}

fn mutual_information(xa: &[u16], ba: usize, xb: &[u16], bb: usize) -> f64 {
    let t = xa.len();
    let tf = t as f64;
    let mut joint = vec![0u32; ba * bb];
    let mut ma = vec![0u32; ba];
    let mut mb = vec![0u32; bb];
    for k in 0..t {
        let (a, b) = (xa[k] as usize, xb[k] as usize);
        joint[a * bb + b] += 1;
        ma[a] += 1;
        mb[b] += 1;
    }
    let mut mi = 0.0;
    for a in 0..ba {
        for b in 0..bb {
            let nab = joint[a * bb + b];
            if nab == 0 {
                continue;
            }
            let p = nab as f64 / tf;
            mi += p * ((nab as f64 * tf) / (ma[a] as f64 * mb[b] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// Directed plug-in transfer entropy in nats: entry (j, i) measures how
/// much `lag` past values of series j reduce uncertainty about series
/// i's next value beyond i's own past.
pub fn te_matrix(y: ArrayView2<'_, f64>, lag: usize, bins: usize) -> Result<AdjacencyMatrix> {
    let (t, n) = y.dim();
    if lag == 0 {
        return Err(Error::Config("transfer entropy lag must be at least 1".into()));
    }
    if lag > 7 {
        return Err(Error::Config("transfer entropy lag above 7 is not supported".into()));
    }
    if bins < 2 {
        return Err(Error::Config("transfer entropy needs at least 2 bins".into()));
    }
    if t < 10 * bins + lag {
        return Err(Error::Config(format!(
            "transfer entropy needs T >= 10*bins + lag ({}), got {t}",
            10 * bins + lag
        )));
    }
    let binned: Vec<Vec<u16>> = (0..n)
        .map(|j| quantile_bins(y.column(j).as_standard_layout().as_slice().unwrap(), bins).0)
        .collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out[(j, i)] = transfer_entropy(&binned[i], &binned[j], lag);
            }
        }
    }
    AdjacencyMatrix::new(out, true)
}

/// TE(source -> target) from pre-binned sequences: the conditional-MI
/// decomposition H(f | past_i) - H(f | past_i, past_j) evaluated from
/// plug-in tuple counts. Counts live in ordered maps so the summation
/// order (and hence the result bytes) never varies between runs.
fn transfer_entropy(target: &[u16], source: &[u16], lag: usize) -> f64 {
    let t = target.len();
    let mf = (t - lag) as f64;
    let mut n_fij: BTreeMap<(u16, u64, u64), u32> = BTreeMap::new();
    let mut n_ij: BTreeMap<(u64, u64), u32> = BTreeMap::new();
    let mut n_fi: BTreeMap<(u16, u64), u32> = BTreeMap::new();
    let mut n_i: BTreeMap<u64, u32> = BTreeMap::new();
    for k in (lag - 1)..(t - 1) {
        let f = target[k + 1];
        // 9 bits per element keeps lag <= 7 collision-free at 256 bins
        let mut ip = 0u64;
        let mut jp = 0u64;
        for l in 0..lag {
            ip = (ip << 9) | (target[k - l] as u64 + 1);
            jp = (jp << 9) | (source[k - l] as u64 + 1);
        }
        *n_i.entry(ip).or_insert(0) += 1;
        *n_fi.entry((f, ip)).or_insert(0) += 1;
        *n_ij.entry((ip, jp)).or_insert(0) += 1;
        *n_fij.entry((f, ip, jp)).or_insert(0) += 1;
    }
    let mut te = 0.0;
    for (&(f, ip, jp), &nfij) in &n_fij {
        let p = nfij as f64 / mf;
        let nij = n_ij[&(ip, jp)] as f64;
        let nfi = n_fi[&(f, ip)] as f64;
        let ni = n_i[&ip] as f64;
        te += p * ((nfij as f64 * ni) / (nij * nfi)).ln();
    }
    te.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::prelude::*;

    #[test]
    fn identical_series_reach_log_bins() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = 10_000;
        let mut y = Array2::zeros((t, 2));
        for i in 0..t {
            let v: f64 = rng.random_range(-1.0..1.0);
            y[(i, 0)] = v;
            y[(i, 1)] = v;
        }
        let a = mi_matrix(y.view(), 8).unwrap();
        let expect = 8.0f64.ln();
        assert!(
            (a.weights()[(0, 1)] - expect).abs() / expect < 0.05,
            "MI {} vs log(8) {}",
            a.weights()[(0, 1)],
            expect
        );
    }

    #[test]
    fn independent_series_near_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = 10_000;
        let mut y = Array2::zeros((t, 2));
        for v in y.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let a = mi_matrix(y.view(), 8).unwrap();
        assert!(a.weights()[(0, 1)] < 0.05, "MI = {}", a.weights()[(0, 1)]);
    }

    #[test]
    fn mi_is_symmetric_exactly_and_matches_count_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let t = 500;
        let mut y = Array2::zeros((t, 3));
        for i in 0..t {
            let v: f64 = rng.random_range(-1.0..1.0);
            y[(i, 0)] = v + 0.3 * rng.random_range(-1.0..1.0);
            y[(i, 1)] = v;
            y[(i, 2)] = rng.random_range(-1.0..1.0);
        }
        let a = mi_matrix(y.view(), 4).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(a.weights()[(i, j)], a.weights()[(j, i)]);
            }
        }

        // exact-count oracle on the binned pair (0, 1)
        let (b0, n0) = quantile_bins(y.column(0).as_standard_layout().as_slice().unwrap(), 4);
        let (b1, n1) = quantile_bins(y.column(1).as_standard_layout().as_slice().unwrap(), 4);
        let mut joint = vec![0.0; n0 * n1];
        let mut m0 = vec![0.0; n0];
        let mut m1 = vec![0.0; n1];
        for k in 0..t {
            joint[b0[k] as usize * n1 + b1[k] as usize] += 1.0;
            m0[b0[k] as usize] += 1.0;
            m1[b1[k] as usize] += 1.0;
        }
        let tf = t as f64;
        let mut expect = 0.0;
        for a0 in 0..n0 {
            for a1 in 0..n1 {
                let c = joint[a0 * n1 + a1];
                if c > 0.0 {
                    expect += c / tf * ((c * tf) / (m0[a0] * m1[a1])).ln();
                }
            }
        }
        assert!((a.weights()[(0, 1)] - expect).abs() < 1e-12);
    }

    #[test]
    fn fewer_distinct_values_lowers_bin_count() {
        let x = [1.0, 1.0, 2.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        let (assign, b) = quantile_bins(&x, 5);
        assert_eq!(b, 2);
        assert!(assign.iter().all(|v| *v < 2));
        // equal values share a bin
        assert_eq!(assign[0], assign[1]);
    }

    #[test]
    fn lagged_copy_drives_directed_te() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let t = 10_000;
        let mut y = Array2::zeros((t, 2));
        y[(0, 1)] = 0.5;
        for i in 0..t {
            y[(i, 1)] = rng.random_range(-1.0..1.0);
            if i > 0 {
                y[(i, 0)] = y[(i - 1, 1)];
            }
        }
        let a = te_matrix(y.view(), 1, 4).unwrap();
        let expect = 4.0f64.ln();
        // source series 1 determines target series 0's next value
        assert!(
            (a.weights()[(1, 0)] - expect).abs() / expect < 0.05,
            "TE(1->0) = {} vs log(4) = {}",
            a.weights()[(1, 0)],
            expect
        );
        assert!(a.weights()[(0, 1)] < 0.05, "reverse TE = {}", a.weights()[(0, 1)]);
    }

    #[test]
    fn iid_series_have_small_te() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let t = 10_000;
        let mut y = Array2::zeros((t, 3));
        for v in y.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let a = te_matrix(y.view(), 1, 4).unwrap();
        for v in a.weights().iter() {
            assert!(*v < 0.08, "TE on iid series = {v}");
        }
    }

    #[test]
    fn te_diagonal_excluded() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut y = Array2::zeros((600, 2));
        for v in y.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        let a = te_matrix(y.view(), 2, 3).unwrap();
        assert_eq!(a.weights()[(0, 0)], 0.0);
        assert_eq!(a.weights()[(1, 1)], 0.0);
    }

    #[test]
    fn te_matches_histogram_count_oracle() {
        // oracle: direct conditional-entropy difference H(f|ip) - H(f|ip,jp)
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let t = 2000;
        let mut y = Array2::zeros((t, 2));
        for i in 0..t {
            y[(i, 1)] = rng.random_range(-1.0..1.0);
            y[(i, 0)] = if i > 0 { 0.7 * y[(i - 1, 1)] } else { 0.0 } + 0.4 * rng.random_range(-1.0..1.0);
        }
        let lag = 1usize;
        let bins = 3usize;
        let a = te_matrix(y.view(), lag, bins).unwrap();

        let (b0, _) = quantile_bins(y.column(0).as_standard_layout().as_slice().unwrap(), bins);
        let (b1, _) = quantile_bins(y.column(1).as_standard_layout().as_slice().unwrap(), bins);
        let samples = (t - lag) as f64;
        let mut cnt_fij = std::collections::BTreeMap::new();
        let mut cnt_ij = std::collections::BTreeMap::new();
        let mut cnt_fi = std::collections::BTreeMap::new();
        let mut cnt_i = std::collections::BTreeMap::new();
        for k in 0..t - 1 {
            let f = b0[k + 1];
            let ip = b0[k];
            let jp = b1[k];
            *cnt_fij.entry((f, ip, jp)).or_insert(0u32) += 1;
            *cnt_ij.entry((ip, jp)).or_insert(0u32) += 1;
            *cnt_fi.entry((f, ip)).or_insert(0u32) += 1;
            *cnt_i.entry(ip).or_insert(0u32) += 1;
        }
        // H(f|ip) - H(f|ip,jp), both from plug-in counts
        let mut h_f_i = 0.0;
        for (&(_, ip), &c) in &cnt_fi {
            let p = c as f64 / samples;
            h_f_i -= p * (c as f64 / cnt_i[&ip] as f64).ln();
        }
        let mut h_f_ij = 0.0;
        for (&(_, ip, jp), &c) in &cnt_fij {
            let p = c as f64 / samples;
            h_f_ij -= p * (c as f64 / cnt_ij[&(ip, jp)] as f64).ln();
        }
        let expect = (h_f_i - h_f_ij).max(0.0);
        assert!(
            (a.weights()[(1, 0)] - expect).abs() < 1e-10,
            "te {} vs oracle {}",
            a.weights()[(1, 0)],
            expect
        );
    }
}
