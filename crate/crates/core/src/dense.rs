//! Row-major dense matrices of 64-bit reals.
//!
//! [`DenseMat`] carries node features, Chebyshev basis blocks, weight
//! matrices, and eigenvector bases. The multiply kernels skip zero entries of
//! the left factor, which pays off for one-hot features and post-ReLU
//! activations.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows × cols` matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Matrix with every entry set to `value`.
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        DenseMat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Identity matrix of order `n`.
    pub fn identity(n: usize) -> Self {
        let mut m = DenseMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wrap an existing row-major buffer; fails when the length is wrong.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "DenseMat::from_vec",
                details: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(DenseMat { rows, cols, data })
    }

    /// Build from nested rows; handy in tests. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        DenseMat {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self · rhs`.
    pub fn matmul(&self, rhs: &DenseMat) -> Result<DenseMat> {
        if self.cols != rhs.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                details: format!("{}x{} · {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        let mut out = DenseMat::zeros(self.rows, rhs.cols);
        let rc = rhs.cols;
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (k, &a) in arow.iter().enumerate() {
                if a != 0.0 {
                    let brow = &rhs.data[k * rc..(k + 1) * rc];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn matmul_at_b(&self, rhs: &DenseMat) -> Result<DenseMat> {
        if self.rows != rhs.rows {
            return Err(Error::DimMismatch {
                op: "matmul_at_b",
                details: format!("{}x{}ᵀ · {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        let mut out = DenseMat::zeros(self.cols, rhs.cols);
        let rc = rhs.cols;
        for i in 0..self.rows {
            let arow = self.row(i);
            let brow = rhs.row(i);
            for (k, &a) in arow.iter().enumerate() {
                if a != 0.0 {
                    let orow = &mut out.data[k * rc..(k + 1) * rc];
                    for (o, &b) in orow.iter_mut().zip(brow) {
                        *o += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `self · rhsᵀ` without materializing the transpose.
    pub fn matmul_a_bt(&self, rhs: &DenseMat) -> Result<DenseMat> {
        if self.cols != rhs.cols {
            return Err(Error::DimMismatch {
                op: "matmul_a_bt",
                details: format!("{}x{} · {}x{}ᵀ", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        let mut out = DenseMat::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let arow = self.row(i);
            let orow = out.row_mut(i);
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMat {
        let mut out = DenseMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for (j, &v) in self.row(i).iter().enumerate() {
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Entrywise sum; shapes must match.
    pub fn add(&self, rhs: &DenseMat) -> Result<DenseMat> {
        self.zip_map(rhs, "add", |a, b| a + b)
    }

    /// Entrywise difference; shapes must match.
    pub fn sub(&self, rhs: &DenseMat) -> Result<DenseMat> {
        self.zip_map(rhs, "sub", |a, b| a - b)
    }

    /// Entrywise (Hadamard) product; shapes must match.
    pub fn hadamard(&self, rhs: &DenseMat) -> Result<DenseMat> {
        self.zip_map(rhs, "hadamard", |a, b| a * b)
    }

    /// Multiply every entry by `c`.
    pub fn scale(&self, c: f64) -> DenseMat {
        self.map(|v| v * c)
    }

    /// Apply `f` to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMat {
        DenseMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, rhs: &DenseMat, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<DenseMat> {
        if self.shape() != rhs.shape() {
            return Err(Error::DimMismatch {
                op,
                details: format!("{}x{} vs {}x{}", self.rows, self.cols, rhs.rows, rhs.cols),
            });
        }
        Ok(DenseMat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Accumulate `c · rhs` into `self`; shapes must match.
    pub fn add_assign_scaled(&mut self, rhs: &DenseMat, c: f64) {
        assert_eq!(self.shape(), rhs.shape(), "add_assign_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += c * b;
        }
    }

    /// Horizontal concatenation of equally tall matrices.
    pub fn concat_cols(parts: &[&DenseMat]) -> Result<DenseMat> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::DimMismatch {
                op: "concat_cols",
                details: "row counts differ".into(),
            });
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut out = DenseMat::zeros(rows, cols);
        for i in 0..rows {
            let orow = out.row_mut(i);
            let mut at = 0;
            for m in parts {
                orow[at..at + m.cols].copy_from_slice(m.row(i));
                at += m.cols;
            }
        }
        Ok(out)
    }

    /// Columns `start..end` as a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<DenseMat> {
        if start > end || end > self.cols {
            return Err(Error::DimMismatch {
                op: "slice_cols",
                details: format!("range {start}..{end} of {} cols", self.cols),
            });
        }
        let mut out = DenseMat::zeros(self.rows, end - start);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[start..end]);
        }
        Ok(out)
    }

    /// Largest absolute entry (0 for empty matrices).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, &v| m.max(v.abs()))
    }

    /// Largest absolute entrywise difference; panics on shape mismatch.
    pub fn max_abs_diff(&self, rhs: &DenseMat) -> f64 {
        assert_eq!(self.shape(), rhs.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&rhs.data)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for DenseMat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}
