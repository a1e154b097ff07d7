//! Small dense solvers shared by the statistical estimators.

/// Solves (A + ridge·I) x = b in place for a small symmetric system,
/// using Gaussian elimination with partial pivoting. `a` is row-major
/// m×m. Panics only on dimension mismatch; singular systems are handled
/// by the ridge term supplied by the caller.
pub fn solve_ridge(a: &[f64], b: &[f64], m: usize, ridge: f64) -> Vec<f64> {
    assert_eq!(a.len(), m * m);
    assert_eq!(b.len(), m);
    let mut aug = vec![0.0f64; m * (m + 1)];
    for r in 0..m {
        for c in 0..m {
            aug[r * (m + 1) + c] = a[r * m + c] + if r == c { ridge } else { 0.0 };
        }
        aug[r * (m + 1) + m] = b[r];
    }
    for col in 0..m {
        // pivot
        let mut piv = col;
        let mut best = aug[col * (m + 1) + col].abs();
        for r in col + 1..m {
            let v = aug[r * (m + 1) + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if piv != col {
            for c in 0..=m {
                aug.swap(col * (m + 1) + c, piv * (m + 1) + c);
            }
        }
        let d = aug[col * (m + 1) + col];
        if d == 0.0 {
            // fully degenerate even with ridge; leave row as-is (solution
            // component stays 0 after back substitution guard below)
            continue;
        }
        for r in col + 1..m {
            let f = aug[r * (m + 1) + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..=m {
                aug[r * (m + 1) + c] -= f * aug[col * (m + 1) + c];
            }
        }
    }
    let mut x = vec![0.0f64; m];
    for col in (0..m).rev() {
        let mut s = aug[col * (m + 1) + m];
        for c in col + 1..m {
            s -= aug[col * (m + 1) + c] * x[c];
        }
        let d = aug[col * (m + 1) + col];
        x[col] = if d == 0.0 { 0.0 } else { s / d };
    }
    x
}

/// Inverse of a small dense matrix via Gauss-Jordan with partial
/// pivoting. Returns `None` when the matrix is numerically singular.
pub fn invert(a: &[f64], m: usize) -> Option<Vec<f64>> {
    assert_eq!(a.len(), m * m);
    let mut aug = vec![0.0f64; m * 2 * m];
    for r in 0..m {
        for c in 0..m {
            aug[r * 2 * m + c] = a[r * m + c];
        }
        aug[r * 2 * m + m + r] = 1.0;
    }
    for col in 0..m {
        let mut piv = col;
        let mut best = aug[col * 2 * m + col].abs();
        for r in col + 1..m {
            let v = aug[r * 2 * m + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best < 1e-300 {
            return None;
        }
        if piv != col {
            for c in 0..2 * m {
                aug.swap(col * 2 * m + c, piv * 2 * m + c);
            }
        }
        let d = aug[col * 2 * m + col];
        for c in 0..2 * m {
            aug[col * 2 * m + c] /= d;
        }
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = aug[r * 2 * m + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..2 * m {
                aug[r * 2 * m + c] -= f * aug[col * 2 * m + c];
            }
        }
    }
    let mut inv = vec![0.0f64; m * m];
    for r in 0..m {
        for c in 0..m {
            inv[r * m + c] = aug[r * 2 * m + m + c];
        }
    }
    Some(inv)
}

/// Largest absolute eigenvalue estimate by power iteration.
pub fn spectral_radius(a: &[f64], m: usize, iters: usize) -> f64 {
    assert_eq!(a.len(), m * m);
    let mut v = vec![1.0f64; m];
    let mut radius = 0.0;
    for _ in 0..iters {
        let mut w = vec![0.0f64; m];
        for r in 0..m {
            let mut s = 0.0;
            for c in 0..m {
                s += a[r * m + c] * v[c];
            }
            w[r] = s;
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return 0.0;
        }
        radius = norm;
        for x in &mut w {
            *x /= norm;
        }
        v = w;
    }
    radius
}
