use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major 2-D array of reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Tensor::new", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 1.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::shape("Tensor::from_rows", &[cols], &[bad.len()]));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// The single value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_shape(other, op)?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, &self.shape(), &other.shape()));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transpose(&self) -> Tensor {
        Tensor::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", &self.shape(), &other.shape()));
        }
        Ok(gemm(self, false, other, false))
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", &self.shape(), &other.shape()));
        }
        Ok(gemm(self, false, other, true))
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", &self.shape(), &other.shape()));
        }
        Ok(gemm(self, true, other, false))
    }

    /// Adds a `[1, cols]` row to every row.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::shape("add_row", &self.shape(), &bias.shape()));
        }
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.cols.max(1)) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Column sums as a `[1, cols]` row.
    pub fn sum_rows(&self) -> Tensor {
        let mut out = Tensor::zeros(1, self.cols);
        for row in self.data.chunks(self.cols.max(1)) {
            for (o, v) in out.data.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Row sums as a `[rows, 1]` column.
    pub fn sum_cols(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: 1,
            data: (0..self.rows).map(|i| self.row(i).iter().sum()).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.cols {
            return Err(Error::shape("slice_cols", &self.shape(), &[start, len]));
        }
        Ok(Tensor::from_fn(self.rows, len, |i, j| {
            self.get(i, start + j)
        }))
    }

    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.rows {
            return Err(Error::shape("slice_rows", &self.shape(), &[start, len]));
        }
        Ok(Tensor {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::shape("concat_cols", &[rows], &bad.shape()));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(Error::shape("concat_rows", &[cols], &bad.shape()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            rows: data.len() / cols.max(1),
            cols,
            data,
        })
    }
}

fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (m, k) = if ta {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if tb { b.rows } else { b.cols };
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    let (rsa, csa) = if ta { (1, a.cols) } else { (a.cols, 1) };
    let (rsb, csb) = if tb { (1, b.cols) } else { (b.cols, 1) };
    // SAFETY: strides describe exactly the m×k, k×n and m×n row-major buffers above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa as isize,
            csa as isize,
            b.data.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn matmul_variants_agree_with_loops() {
        let a = Tensor::from_fn(5, 3, |i, j| (i * 3 + j) as f64 * 0.37 - 1.0);
        let b = Tensor::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.5 + 0.1);
        let c = a.matmul(&b).unwrap();
        let want = naive(&a, &b);
        for (x, y) in c.data().iter().zip(want.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c2 = a.matmul_nt(&b.transpose()).unwrap();
        let c3 = a.transpose().matmul_tn(&b).unwrap();
        for ((x, y), z) in c.data().iter().zip(c2.data()).zip(c3.data()) {
            assert!((x - y).abs() < 1e-12 && (x - z).abs() < 1e-12);
        }
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn concat_and_slice_invert() {
        let a = Tensor::from_fn(3, 2, |i, j| (i + 10 * j) as f64);
        let b = Tensor::from_fn(3, 3, |i, j| -((i * j) as f64));
        let c = Tensor::concat_cols(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), [3, 5]);
        assert_eq!(c.slice_cols(0, 2).unwrap(), a);
        assert_eq!(c.slice_cols(2, 3).unwrap(), b);
    }

    #[test]
    fn reductions() {
        let a = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.sum_cols().data(), &[6.0, 15.0]);
        assert_eq!(a.sum_rows().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(a.mean(), 3.5);
        assert!(Tensor::new(2, 2, vec![0.0; 3]).is_err());
    }
}
