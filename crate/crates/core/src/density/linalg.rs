//! Small dense helpers for symmetric positive definite matrices.

use ndarray::{Array2, ArrayView2};

use super::DensityError;

/// Lower-triangular `L` with `a = L L^T`.
pub(crate) fn cholesky(a: ArrayView2<'_, f64>, component: usize) -> Result<Array2<f64>, DensityError> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(DensityError::NotPositiveDefinite { component });
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L z = b` in place for lower-triangular `L` stored row-major.
#[inline]
pub(crate) fn solve_lower_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let mut s = b[i];
        for (lk, zk) in row.iter().zip(&b[..i]) {
            s -= lk * zk;
        }
        b[i] = s / l[i * n + i];
    }
}

/// `tr(A^-1)` for `A = L L^T`, i.e. the squared Frobenius norm of `L^-1`.
pub(crate) fn trace_of_inverse(l: &Array2<f64>) -> f64 {
    let n = l.nrows();
    let flat = l.as_standard_layout();
    let flat = flat.as_slice().expect("contiguous");
    let mut total = 0.0;
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        solve_lower_in_place(flat, n, &mut col);
        total += col.iter().map(|v| v * v).sum::<f64>();
    }
    total
}

pub(crate) fn log_det_from_cholesky(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}
