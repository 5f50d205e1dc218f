//! Small dense linear algebra kernels.
//!
//! Problem sizes here are tiny (d rarely exceeds a few dozen), so direct
//! O(d^3) factorizations are used throughout. All routines are deterministic.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NonSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::NotPsd(format!(
                "pivot {diag:e} at column {j} during Cholesky"
            )));
        }
        let d = diag.sqrt();
        l[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L L^T x = b` given the lower Cholesky factor.
pub fn chol_solve_vec(l: &Array2<f64>, b: &ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut y = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let t = y[k];
            y[i] -= l[[i, k]] * t;
        }
        y[i] /= l[[i, i]];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let t = y[k];
            y[i] -= l[[k, i]] * t;
        }
        y[i] /= l[[i, i]];
    }
    y
}

/// Solves `L L^T X = B` column-by-column.
pub fn chol_solve_mat(l: &Array2<f64>, b: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(b.dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let x = chol_solve_vec(l, &col);
        out.column_mut(j).assign(&x);
    }
    out
}

/// Log-determinant from a lower Cholesky factor.
pub fn chol_logdet(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

/// LU decomposition with partial pivoting. Returns (combined LU, row permutation, sign).
fn lu_factor(a: &ArrayView2<f64>) -> Result<(Array2<f64>, Vec<usize>, f64)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NonSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    let mut lu = a.to_owned();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lu[[col, col]].abs();
        for r in (col + 1)..n {
            let v = lu[[r, col]].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == 0.0 || !pivot_val.is_finite() {
            return Err(Error::Numeric(format!(
                "singular matrix in LU at column {col}"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                lu.swap([col, j], [pivot_row, j]);
            }
            perm.swap(col, pivot_row);
            sign = -sign;
        }
        let p = lu[[col, col]];
        for r in (col + 1)..n {
            let f = lu[[r, col]] / p;
            lu[[r, col]] = f;
            for j in (col + 1)..n {
                let t = lu[[col, j]];
                lu[[r, j]] -= f * t;
            }
        }
    }
    Ok((lu, perm, sign))
}

/// Determinant via LU with partial pivoting.
pub fn det(a: &ArrayView2<f64>) -> Result<f64> {
    match lu_factor(a) {
        Ok((lu, _, sign)) => Ok(sign * lu.diag().iter().product::<f64>()),
        // A singular pivot means the determinant is exactly the product so far
        // times zero; report 0 rather than an error.
        Err(Error::Numeric(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Matrix inverse via LU with partial pivoting.
pub fn inverse(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let (lu, perm, _) = lu_factor(a)?;
    let mut inv = Array2::<f64>::zeros((n, n));
    for rhs in 0..n {
        // Permuted unit vector, forward then backward substitution.
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = if perm[i] == rhs { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= lu[[i, k]] * y[k];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= lu[[i, k]] * y[k];
            }
            y[i] = s / lu[[i, i]];
        }
        for i in 0..n {
            inv[[i, rhs]] = y[i];
        }
    }
    Ok(inv)
}

/// Matrix exponential by scaling-and-squaring with a truncated Taylor series.
///
/// Accuracy target is ~1e-10 relative for the matrix norms seen here
/// (entries bounded by a few units squared).
pub fn matrix_exp(a: &ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    // 1-norm scaling so the series argument stays small.
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.5 {
        (norm1 / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scale = 2f64.powi(squarings as i32);
    let b = a.mapv(|v| v / scale);

    let mut acc = Array2::<f64>::eye(n);
    let mut term = Array2::<f64>::eye(n);
    for k in 1..=40u32 {
        term = term.dot(&b) / f64::from(k);
        acc += &term;
        let tmax = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if tmax < 1e-18 {
            break;
        }
    }
    let mut result = acc;
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

/// Frobenius norm of the difference of two equally-shaped matrices.
pub fn frobenius_distance(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
