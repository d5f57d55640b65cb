//! Small dense symmetric solvers used by the Newton iterations.

use ndarray::{Array1, Array2};

/// Cholesky factor `L` of a symmetric positive definite matrix, or `None`
/// when a non-positive pivot is met.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

pub(crate) fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    y
}

/// Factorizes `a`, adding `1e-10 * trace / p` to the diagonal (and growing it
/// tenfold) until the factorization succeeds. Returns the factor and whether
/// a ridge was needed.
pub(crate) fn stabilized_cholesky(a: &Array2<f64>) -> Option<(Array2<f64>, bool)> {
    if let Some(l) = cholesky(a) {
        return Some((l, false));
    }
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
    let mut ridge = 1e-10 * (trace / n as f64).max(f64::MIN_POSITIVE);
    for _ in 0..40 {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[[i, i]] += ridge;
        }
        if let Some(l) = cholesky(&shifted) {
            return Some((l, true));
        }
        ridge *= 10.0;
    }
    None
}

pub(crate) fn inverse_from_cholesky(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    let mut e = Array1::<f64>::zeros(n);
    for j in 0..n {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        inv.column_mut(j).assign(&col);
    }
    inv
}
