//! Minimal dense linear algebra for the small matrices this crate needs
//! (parameter covariances and control-noise covariances, n ≤ a few dozen).
//! Row-major storage, generic over the scalar type.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Build from nested rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows in matrix literal"));
        }
        Ok(Mat { rows: r, cols: c, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&self, s: T) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// `self + s * I`.
    pub fn add_scaled_identity(&self, s: T) -> Self {
        let mut m = self.clone();
        for i in 0..m.rows.min(m.cols) {
            m[(i, i)] += s;
        }
        m
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols, "matrix-vector shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    pub fn matmul(&self, other: &Mat<T>) -> Mat<T> {
        assert_eq!(self.cols, other.rows, "matrix-matrix shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Mat<T> {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }

    /// Lower-triangular Cholesky factor `L` with `L Lᵀ = self`.
    ///
    /// Accepts positive *semi*-definite inputs: a zero pivot is allowed when
    /// the remainder of its column is zero too (so the all-zero covariance of
    /// a point estimate factors cleanly). Returns `None` when the matrix is
    /// indefinite.
    pub fn cholesky_lower(&self) -> Option<Mat<T>> {
        if !self.is_square() {
            return None;
        }
        let n = self.rows;
        let mut l = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = self[(i, j)];
                for k in 0..j {
                    sum = sum - l[(i, k)] * l[(j, k)];
                }
                if i == j {
                    if sum < T::zero() {
                        return None;
                    }
                    l[(i, j)] = sum.sqrt();
                } else if l[(j, j)] > T::zero() {
                    l[(i, j)] = sum / l[(j, j)];
                } else if sum == T::zero() {
                    l[(i, j)] = T::zero();
                } else {
                    return None;
                }
            }
        }
        Some(l)
    }

    /// Inverse of a symmetric positive-definite matrix via Cholesky.
    pub fn spd_inverse(&self) -> Result<Mat<T>> {
        let l = self
            .cholesky_lower()
            .ok_or_else(|| Error::numeric("matrix is not positive definite"))?;
        let n = self.rows;
        if (0..n).any(|i| l[(i, i)] <= T::zero()) {
            return Err(Error::numeric("matrix is not positive definite"));
        }
        // Columns of the inverse: solve L Lᵀ x = e_i.
        let mut inv = Mat::zeros(n, n);
        for col in 0..n {
            let mut e = vec![T::zero(); n];
            e[col] = T::one();
            let y = l.solve_lower(&e);
            let x = l.solve_lower_transposed(&y);
            for row in 0..n {
                inv[(row, col)] = x[row];
            }
        }
        Ok(inv)
    }

    /// Forward substitution: solve `L y = b` for lower-triangular `self`.
    fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut sum = b[i];
            for k in 0..i {
                sum = sum - self[(i, k)] * y[k];
            }
            y[i] = sum / self[(i, i)];
        }
        y
    }

    /// Back substitution: solve `Lᵀ x = b` for lower-triangular `self`.
    fn solve_lower_transposed(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut sum = b[i];
            for k in i + 1..n {
                sum = sum - self[(k, i)] * x[k];
            }
            x[i] = sum / self[(i, i)];
        }
        x
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for Mat<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for Mat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cholesky_recomposes() {
        let a = Mat::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = a.cholesky_lower().unwrap();
        let back = l.matmul(&l.transpose());
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[(i, j)], a[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_of_zero_matrix_is_zero() {
        let z: Mat<f64> = Mat::zeros(3, 3);
        let l = z.cholesky_lower().unwrap();
        assert!(l.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(a.cholesky_lower().is_none());
    }

    #[test]
    fn spd_inverse_roundtrip() {
        let a = Mat::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let inv = a.spd_inverse().unwrap();
        let prod = a.matmul(&inv);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[(i, j)], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let z: Mat<f64> = Mat::zeros(2, 2);
        assert!(z.spd_inverse().is_err());
    }
}
