//! Row-major dense `f64` matrix with the handful of kernels the model needs.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds from equal-length rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · wᵀ + bias`, where `w` is `out × in` and `self` is `batch × in`.
    pub fn affine(&self, w: &Matrix, bias: &[f64]) -> Matrix {
        assert_eq!(self.cols, w.cols, "affine: inner dimension mismatch");
        assert_eq!(bias.len(), w.rows, "affine: bias length mismatch");
        let mut out = Matrix::zeros(self.rows, w.rows);
        for i in 0..self.rows {
            let x = self.row(i);
            let o = out.row_mut(i);
            for (k, ok) in o.iter_mut().enumerate() {
                *ok = bias[k] + dot(x, w.row(k));
            }
        }
        out
    }

    /// `self · w` for `self` of shape `batch × out` and `w` of shape `out × in`.
    pub fn matmul(&self, w: &Matrix) -> Matrix {
        assert_eq!(self.cols, w.rows, "matmul: inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, w.cols);
        for i in 0..self.rows {
            let g = self.row(i);
            let o = out.row_mut(i);
            for (k, &gk) in g.iter().enumerate() {
                if gk == 0.0 {
                    continue;
                }
                for (oj, &wj) in o.iter_mut().zip(w.row(k)) {
                    *oj += gk * wj;
                }
            }
        }
        out
    }

    /// `selfᵀ · x` for `self` of shape `batch × out` and `x` of shape `batch × in`.
    pub fn transpose_matmul(&self, x: &Matrix) -> Matrix {
        assert_eq!(self.rows, x.rows, "transpose_matmul: batch mismatch");
        let mut out = Matrix::zeros(self.cols, x.cols);
        for b in 0..self.rows {
            let g = self.row(b);
            let xr = x.row(b);
            for (k, &gk) in g.iter().enumerate() {
                if gk == 0.0 {
                    continue;
                }
                for (oj, &xj) in out.row_mut(k).iter_mut().zip(xr) {
                    *oj += gk * xj;
                }
            }
        }
        out
    }

    /// Column sums.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean distance between two equal-length slices.
#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_backward_kernels_agree_with_hand_values() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let w = Matrix::from_rows(&[[1.0, 0.0], [0.5, -1.0], [2.0, 1.0]]);
        let y = x.affine(&w, &[0.0, 1.0, -1.0]);
        assert_eq!(y.row(0), &[1.0, -0.5, 3.0]);
        assert_eq!(y.row(1), &[3.0, -1.5, 9.0]);

        let g = Matrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]]);
        let dx = g.matmul(&w);
        assert_eq!(dx.row(0), &[3.0, 1.0]);
        assert_eq!(dx.row(1), &[1.0, -2.0]);
        let dw = g.transpose_matmul(&x);
        assert_eq!(dw.row(0), &[1.0, 2.0]);
        assert_eq!(dw.row(1), &[6.0, 8.0]);
        assert_eq!(dw.row(2), &[1.0, 2.0]);
        assert_eq!(g.column_sums(), [1.0, 2.0, 1.0]);
    }

    #[test]
    fn euclidean_345() {
        assert_eq!(euclidean(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }
}
