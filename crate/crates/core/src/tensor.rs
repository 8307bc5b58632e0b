//! Dense row-major `f64` tensors.
//!
//! Every matrix in the crate is a [`Tensor`]. Rank-2 is the working shape;
//! higher ranks are stored but matrix operations treat all leading extents
//! as rows (`rows() = product of leading extents`, `cols() = last extent`).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{dim_err, DbaError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(DbaError::Parameter(format!(
                "tensor extents must be >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(dim_err("tensor", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::full(rows, cols, 0.0)
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows >= 1 && cols >= 1, "tensor extents must be >= 1");
        Self {
            shape: vec![rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self {
            shape: other.shape.clone(),
            data: vec![0.0; other.data.len()],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(1, 1, value)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(DbaError::Parameter("ragged rows".into()));
        }
        Self::new(vec![r, c], rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let c = self.cols();
        self.data[i * c + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    /// `self · other` for `self: m×k`, `other: k×p`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = (self.rows(), self.cols());
        let (k2, p) = (other.rows(), other.cols());
        if k != k2 || self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(dim_err("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let c_row = &mut out[i * p..(i + 1) * p];
            for (t, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[t * p..(t + 1) * p];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(dim_err(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Numerically stable row-wise softmax (per-row max subtraction).
    pub fn softmax_rows(&self) -> Tensor {
        let c = self.cols();
        let mut data = self.data.clone();
        for row in data.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let c = self.cols();
        if start >= end || end > c {
            return Err(dim_err("slice_cols", &self.shape, &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows() * w);
        for row in self.data.chunks(c) {
            data.extend_from_slice(&row[start..end]);
        }
        Ok(Tensor {
            shape: vec![self.rows(), w],
            data,
        })
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| DbaError::Parameter("concat of zero tensors".into()))?;
        let rows = first.rows();
        if let Some(bad) = parts.iter().find(|p| p.rows() != rows) {
            return Err(dim_err("concat_cols", first.shape(), bad.shape()));
        }
        let total: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Tensor {
            shape: vec![rows, total],
            data,
        })
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| DbaError::Parameter("concat of zero tensors".into()))?;
        let cols = first.cols();
        if let Some(bad) = parts.iter().find(|p| p.cols() != cols) {
            return Err(dim_err("concat_rows", first.shape(), bad.shape()));
        }
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        let rows = data.len() / cols;
        Ok(Tensor {
            shape: vec![rows, cols],
            data,
        })
    }

    /// Reorders rows so that output row `i` is input row `perm[i]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Tensor {
        assert_eq!(perm.len(), self.rows());
        let mut data = Vec::with_capacity(self.data.len());
        for &p in perm {
            data.extend_from_slice(self.row(p));
        }
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Text dump: shape line, then one line per row with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let dims: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        out.push_str(&dims.join(" "));
        out.push('\n');
        for row in self.data.chunks(self.cols()) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Tensor> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| DbaError::Parameter("empty tensor dump".into()))?;
        let shape = header
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DbaError::Parameter(format!("bad shape line {header:?}: {e}")))?;
        let mut data = Vec::new();
        for line in lines {
            for cell in line.split_whitespace() {
                data.push(
                    cell.parse::<f64>()
                        .map_err(|e| DbaError::Parameter(format!("bad value {cell:?}: {e}")))?,
                );
            }
        }
        Tensor::new(shape, data)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Tensor> {
        Tensor::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Free-function form of [`Tensor::matmul`].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.matmul(b)
}

/// Free-function form of [`Tensor::softmax_rows`].
pub fn softmax_rows(x: &Tensor) -> Tensor {
    x.softmax_rows()
}
