use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
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

    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · weightᵀ + bias`, with `weight` stored as `out × in`.
    pub(crate) fn affine(&self, weight: &Matrix, bias: &[f64]) -> Matrix {
        debug_assert_eq!(self.cols, weight.cols);
        let mut out = Matrix::zeros(self.rows, weight.rows);
        for b in 0..self.rows {
            let x = self.row(b);
            let o = out.row_mut(b);
            for (k, dst) in o.iter_mut().enumerate() {
                let w = weight.row(k);
                let mut acc = 0.0;
                for (xi, wi) in x.iter().zip(w) {
                    acc += xi * wi;
                }
                *dst = acc + bias[k];
            }
        }
        out
    }

    /// `selfᵀ · other`, used for weight gradients (`dOutᵀ · input`).
    pub(crate) fn t_matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for b in 0..self.rows {
            let g = self.row(b);
            let x = other.row(b);
            for (k, &gk) in g.iter().enumerate() {
                if gk == 0.0 {
                    continue;
                }
                let dst = out.row_mut(k);
                for (d, xi) in dst.iter_mut().zip(x) {
                    *d += gk * xi;
                }
            }
        }
        out
    }

    /// `self · other` (`dOut · weight` for input gradients).
    pub(crate) fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for b in 0..self.rows {
            let g = self.row(b);
            let dst = out.row_mut(b);
            for (k, &gk) in g.iter().enumerate() {
                if gk == 0.0 {
                    continue;
                }
                for (d, wi) in dst.iter_mut().zip(other.row(k)) {
                    *d += gk * wi;
                }
            }
        }
        out
    }

    pub(crate) fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for b in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(b)) {
                *o += v;
            }
        }
        out
    }
}
