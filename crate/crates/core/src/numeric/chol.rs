//! Dense symmetric positive-definite factorization and triangular solves.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails with a `Numerical` error when a pivot is non-positive, reporting the
/// offending row.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::validation("cholesky: matrix not square"));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            // dot of rows i and j up to column j
            {
                let (row_i, row_j) = (l.row(i), l.row(j));
                let ri = &row_i.as_slice().unwrap()[..j];
                let rj = &row_j.as_slice().unwrap()[..j];
                for k in 0..j {
                    sum -= ri[k] * rj[k];
                }
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return Err(Error::numerical(format!(
                        "cholesky: non-positive pivot {sum:.3e} at row {i}"
                    )));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve L x = b for lower-triangular L.
pub fn solve_lower(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        let row = l.row(i);
        let ri = &row.as_slice().unwrap()[..i];
        let mut s = x[i];
        for k in 0..i {
            s -= ri[k] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve L^T x = b for lower-triangular L.
pub fn solve_lower_transpose(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve (L L^T) x = b.
pub fn solve_spd(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let y = solve_lower(l, b);
    solve_lower_transpose(l, y.view())
}

/// Solve L X = B column-wise for a multi-RHS matrix B (n x m).
pub fn solve_lower_multi(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let m = b.ncols();
    let mut x = b.to_owned();
    for i in 0..n {
        let (done, mut rest) = x.view_mut().split_at(ndarray::Axis(0), i);
        let row = l.row(i);
        let ri = &row.as_slice().unwrap()[..i];
        let mut xi = rest.row_mut(0);
        for k in 0..i {
            let lik = ri[k];
            if lik != 0.0 {
                let xk = done.row(k);
                for c in 0..m {
                    xi[c] -= lik * xk[c];
                }
            }
        }
        let d = l[[i, i]];
        for c in 0..m {
            xi[c] /= d;
        }
    }
    x
}

/// log-determinant of A = L L^T given the factor L.
pub fn logdet_from_factor(l: ArrayView2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(l: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut e = Array1::<f64>::zeros(n);
        e[j] = 1.0;
        let col = solve_spd(l, e.view());
        inv.column_mut(j).assign(&col);
    }
    // enforce exact symmetry against round-off
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[[i, j]] + inv[[j, i]]);
            inv[[i, j]] = v;
            inv[[j, i]] = v;
        }
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn factorizes_known_matrix() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        assert_abs_diff_eq!(l[[0, 0]], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[[1, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l[[1, 1]], 2.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            logdet_from_factor(l.view()),
            (4.0f64 * 3.0 - 4.0).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(a.view()).is_err());
    }

    #[test]
    fn solves_match_direct_inverse() {
        let a = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let l = cholesky(a.view()).unwrap();
        let b = array![1.0, -2.0, 0.5];
        let x = solve_spd(l.view(), b.view());
        let back = a.dot(&x);
        for i in 0..3 {
            assert_abs_diff_eq!(back[i], b[i], epsilon = 1e-10);
        }
        let inv = spd_inverse(l.view());
        let ident = a.dot(&inv);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ident[[i, j]], want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn multi_rhs_matches_single() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let l = cholesky(a.view()).unwrap();
        let b = array![[1.0, 0.0], [0.0, 1.0]];
        let x = solve_lower_multi(l.view(), b.view());
        for c in 0..2 {
            let single = solve_lower(l.view(), b.column(c));
            for r in 0..2 {
                assert_abs_diff_eq!(x[[r, c]], single[r], epsilon = 1e-12);
            }
        }
    }
}
