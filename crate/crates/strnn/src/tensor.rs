//! Dense row-major f64 tensors.
//!
//! Everything in the kernel is two-dimensional: a vector is a 1×n tensor, a
//! scalar is 1×1. Double precision throughout; the gradient checks in the
//! test suite depend on it.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "tensor {}x{} expects {} values, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Tensor { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor { rows: 1, cols: 1, data: vec![value] }
    }

    /// A 1×n row vector.
    pub fn vector(values: &[f64]) -> Self {
        Tensor { rows: 1, cols: values.len(), data: values.to_vec() }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("from_rows: no rows".to_string()));
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "from_rows: ragged rows ({} vs {})",
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "elementwise op on {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a * b)
    }
    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!(
                "add_assign on {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Column means, returned as a 1×cols tensor.
    pub fn mean_rows(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            for (o, v) in out.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
        Tensor { rows: 1, cols: self.cols, data: out }
    }

    /// Column sums, returned as a 1×cols tensor.
    pub fn sum_rows(&self) -> Tensor {
        let mut t = self.mean_rows();
        let n = self.rows as f64;
        for v in t.data.iter_mut() {
            *v *= n;
        }
        t
    }

    /// Row sums, returned as a rows×1 tensor.
    pub fn sum_cols(&self) -> Tensor {
        let data = (0..self.rows).map(|r| self.row(r).iter().sum()).collect();
        Tensor { rows: self.rows, cols: 1, data }
    }

    /// Broadcast a 1×cols row across all rows with `f(self, row)`.
    pub fn broadcast_row(&self, row: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(Error::shape(format!(
                "row broadcast {}x{} against {}x{}",
                self.rows, self.cols, row.rows, row.cols
            )));
        }
        let mut data = Vec::with_capacity(self.len());
        for r in 0..self.rows {
            for c in 0..self.cols {
                data.push(f(self.get(r, c), row.data[c]));
            }
        }
        Ok(Tensor { rows: self.rows, cols: self.cols, data })
    }

    pub fn transpose(&self) -> Tensor {
        let mut data = vec![0.0; self.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Tensor { rows: self.cols, cols: self.rows, data }
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        // matrixmultiply does the blocking; deterministic and single-threaded.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                k as isize,
                1,
                other.data.as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(Tensor { rows: m, cols: n, data: out })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.cols {
            return Err(Error::shape(format!(
                "slice_cols {}..{} of {} columns",
                start, end, self.cols
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Ok(Tensor { rows: self.rows, cols: w, data })
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        if start > end || end > self.rows {
            return Err(Error::shape(format!(
                "slice_rows {}..{} of {} rows",
                start, end, self.rows
            )));
        }
        Ok(Tensor {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        })
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols: empty".to_string()));
        }
        let rows = parts[0].rows;
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::shape("concat_cols: row count mismatch".to_string()));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows: empty".to_string()));
        }
        let cols = parts[0].cols;
        if parts.iter().any(|p| p.cols != cols) {
            return Err(Error::shape("concat_rows: column count mismatch".to_string()));
        }
        let rows: usize = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Select the given columns, in order.
    pub fn gather_cols(&self, idx: &[usize]) -> Result<Tensor> {
        if idx.iter().any(|&i| i >= self.cols) {
            return Err(Error::shape(format!(
                "gather_cols: index out of range (width {})",
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for r in 0..self.rows {
            let row = self.row(r);
            for &i in idx {
                data.push(row[i]);
            }
        }
        Ok(Tensor { rows: self.rows, cols: idx.len(), data })
    }

    /// Select the given rows, in order.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        if idx.iter().any(|&i| i >= self.rows) {
            return Err(Error::shape(format!(
                "gather_rows: index out of range (height {})",
                self.rows
            )));
        }
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Ok(Tensor { rows: idx.len(), cols: self.cols, data })
    }

    /// Place this tensor's columns at `idx` inside a zero tensor of `width` columns.
    pub fn scatter_cols(&self, idx: &[usize], width: usize) -> Result<Tensor> {
        if idx.len() != self.cols {
            return Err(Error::shape(format!(
                "scatter_cols: {} indices for {} columns",
                idx.len(),
                self.cols
            )));
        }
        if idx.iter().any(|&i| i >= width) {
            return Err(Error::shape("scatter_cols: index out of range".to_string()));
        }
        let mut out = Tensor::zeros(self.rows, width);
        for r in 0..self.rows {
            for (c, &i) in idx.iter().enumerate() {
                out.data[r * width + i] = self.data[r * self.cols + c];
            }
        }
        Ok(out)
    }

    pub fn reverse_rows(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len());
        for r in (0..self.rows).rev() {
            data.extend_from_slice(self.row(r));
        }
        Tensor { rows: self.rows, cols: self.cols, data }
    }

    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Tensor> {
        if rows * cols != self.len() {
            return Err(Error::shape(format!(
                "reshape {}x{} -> {}x{}",
                self.rows, self.cols, rows, cols
            )));
        }
        Ok(Tensor { rows, cols, data: self.data.clone() })
    }

    /// Squared Frobenius norm.
    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
