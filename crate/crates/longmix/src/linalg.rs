//! Minimal dense linear algebra: a row-major matrix type plus the Cholesky
//! kernels the mixed-model code is built on. Kept deliberately small — the
//! heaviest thing the pipeline needs is "factor a symmetric positive-definite
//! block and solve against it", and owning these ~200 lines means the REML
//! objective can run allocation-free in its hot loop.

use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

/// Dense row-major matrix of `f64`.
///
/// Serializes as a nested array of rows so matrices embed naturally in JSON
/// reports.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix { rows: r, cols: c, data: rows.iter().flatten().copied().collect() }
    }

    /// Build from a flat row-major buffer.
    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "buffer size mismatch");
        Matrix { rows, cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    /// Borrow row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Mutable row access.
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Flat row-major view of the whole buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Mutable flat row-major view.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Nested-row copy, convenient for JSON and assertions.
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    /// Matrix–vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Largest absolute asymmetry `|a_ij − a_ji|`; zero for exactly symmetric
    /// matrices.
    pub fn max_asymmetry(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let nested = Vec::<Vec<f64>>::deserialize(d)?;
        let cols = nested.first().map_or(0, Vec::len);
        if nested.iter().any(|r| r.len() != cols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(Matrix::from_rows(&nested))
    }
}

/// Error from the Cholesky kernels: the matrix was not positive definite
/// (pivot ≤ 0 or non-finite). Carries the index of the failing pivot, which
/// for a Gram matrix identifies the first linearly dependent column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite(pub usize);

/// In-place lower Cholesky factorization of an `n×n` symmetric matrix stored
/// row-major in `a`. On success the lower triangle (diagonal included) holds
/// `L` with `A = L Lᵀ`; the strict upper triangle is left untouched.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), NotPositiveDefinite> {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            let l_jk = a[j * n + k];
            d -= l_jk * l_jk;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(NotPositiveDefinite(j));
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        let inv_d = 1.0 / d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s * inv_d;
        }
    }
    Ok(())
}

/// Solve `L x = b` in place, with `L` the lower factor from
/// [`cholesky_in_place`].
pub fn forward_solve(l: &[f64], n: usize, b: &mut [f64]) {
    debug_assert_eq!(l.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Solve `Lᵀ x = b` in place.
pub fn backward_solve_transposed(l: &[f64], n: usize, b: &mut [f64]) {
    debug_assert_eq!(l.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Sum of `log` of the diagonal of `L`; `log|A| = 2 ×` this value.
pub fn log_det_from_factor(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum()
}

/// Solve the symmetric positive-definite system `A x = b` by Cholesky,
/// overwriting neither input.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NotPositiveDefinite> {
    let n = a.n_rows();
    assert_eq!(a.n_cols(), n);
    assert_eq!(b.len(), n);
    let mut l = a.as_slice().to_vec();
    cholesky_in_place(&mut l, n)?;
    let mut x = b.to_vec();
    forward_solve(&l, n, &mut x);
    backward_solve_transposed(&l, n, &mut x);
    Ok(x)
}

/// Ordinary least squares via the normal equations: solves
/// `XᵀX β = Xᵀy`. On rank deficiency the error carries the index of the
/// first offending column.
pub(crate) fn ols_beta(x: &Matrix, y: &[f64]) -> Result<Vec<f64>, NotPositiveDefinite> {
    let n = x.n_rows();
    let p = x.n_cols();
    assert_eq!(y.len(), n);
    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    for i in 0..n {
        let row = x.row(i);
        for j in 0..p {
            rhs[j] += row[j] * y[i];
            for k in 0..=j {
                gram[(j, k)] += row[j] * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            gram[(k, j)] = gram[(j, k)];
        }
    }
    solve_spd(&gram, &rhs)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(a: &Matrix) -> Result<Matrix, NotPositiveDefinite> {
    let n = a.n_rows();
    assert_eq!(a.n_cols(), n);
    let mut l = a.as_slice().to_vec();
    cholesky_in_place(&mut l, n)?;
    let mut inv = Matrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for j in 0..n {
        col.fill(0.0);
        col[j] = 1.0;
        forward_solve(&l, n, &mut col);
        backward_solve_transposed(&l, n, &mut col);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    // Enforce exact symmetry against rounding drift.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = avg;
            inv[(j, i)] = avg;
        }
    }
    Ok(inv)
}
