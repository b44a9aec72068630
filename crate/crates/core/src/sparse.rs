//! Symmetric sparse matrices in CSR form.
//!
//! [`SparseSym`] carries graph adjacencies and rescaled Laplacians. Rows are
//! sorted, duplicate entries are summed at construction, explicit zeros are
//! dropped, and numeric symmetry is verified to 1e-12.

use serde::{Deserialize, Serialize};

use crate::dense::DenseMat;
use crate::error::{Error, Result};

/// Tolerance for the symmetry check at construction.
const SYM_TOL: f64 = 1e-12;

/// A numerically symmetric `n × n` sparse matrix in CSR form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Build from `(row, col, value)` entries.
    ///
    /// Duplicate coordinates are summed; entries that sum to exactly zero are
    /// dropped. Fails unless the result is symmetric: entry `(i, j)` must
    /// exist iff `(j, i)` exists, with values equal within 1e-12.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        for &(i, j, _) in entries {
            if i >= n || j >= n {
                return Err(Error::InvalidSparse(format!(
                    "entry ({i}, {j}) out of bounds for n = {n}"
                )));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = entries.to_vec();
        sorted.sort_by_key(|&(i, j, _)| (i, j));

        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(sorted.len());
        for (i, j, v) in sorted {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != 0.0);

        let mut row_ptr = vec![0usize; n + 1];
        for &(i, _, _) in &merged {
            row_ptr[i + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx: Vec<usize> = merged.iter().map(|&(_, j, _)| j).collect();
        let values: Vec<f64> = merged.iter().map(|&(_, _, v)| v).collect();
        let m = SparseSym {
            n,
            row_ptr,
            col_idx,
            values,
        };
        m.check_symmetric()?;
        Ok(m)
    }

    /// Build a unit-weight adjacency from undirected edges.
    ///
    /// Duplicate and reciprocal pairs collapse into a single undirected edge;
    /// self-loops are rejected.
    pub fn from_undirected_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut set = std::collections::BTreeSet::new();
        for &(u, v) in edges {
            if u == v {
                return Err(Error::SelfLoop { node: u });
            }
            set.insert((u.min(v), u.max(v)));
        }
        let mut triplets = Vec::with_capacity(set.len() * 2);
        for (u, v) in set {
            triplets.push((u, v, 1.0));
            triplets.push((v, u, 1.0));
        }
        SparseSym::from_triplets(n, &triplets)
    }

    fn check_symmetric(&self) -> Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                let vt = self.get(j, i);
                if (v - vt).abs() > SYM_TOL {
                    return Err(Error::InvalidSparse(format!(
                        "asymmetric entries: ({i}, {j}) = {v} but ({j}, {i}) = {vt}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterate the stored `(col, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Entry `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.values[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Verify the matrix is usable as a graph adjacency: non-negative
    /// weights and an empty diagonal.
    pub fn validate_adjacency(&self) -> Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v < 0.0 {
                    return Err(Error::NegativeEdgeWeight {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                if i == j {
                    return Err(Error::SelfLoop { node: i });
                }
            }
        }
        Ok(())
    }

    /// Node degrees: the row sums of an adjacency with non-negative weights.
    pub fn degree_vector(&self) -> Result<Vec<f64>> {
        let mut deg = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                if v < 0.0 {
                    return Err(Error::NegativeEdgeWeight {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                deg[i] += v;
            }
        }
        Ok(deg)
    }

    /// The rescaled Laplacian `−D^{−1/2} A D^{−1/2}` of an adjacency.
    ///
    /// This is the normalized Laplacian shifted by `−I` under the fixed
    /// spectral bound `λ_max = 2`, so every eigenvalue lands in `[−1, 1]`.
    /// Isolated nodes (degree 0) get all-zero rows and columns. The entry
    /// pattern of `A` is preserved, and symmetry is exact because the two
    /// mirrored entries are computed from the same product.
    pub fn rescaled_laplacian(&self) -> Result<SparseSym> {
        self.validate_adjacency()?;
        let deg = self.degree_vector()?;
        let inv_sqrt: Vec<f64> = deg
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
            .collect();
        let mut values = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                values.push(-v * inv_sqrt[i] * inv_sqrt[j]);
            }
        }
        Ok(SparseSym {
            n: self.n,
            row_ptr: self.row_ptr.clone(),
            col_idx: self.col_idx.clone(),
            values,
        })
    }

    /// Sparse–dense product `self · x`; cost proportional to `nnz · x.cols`.
    pub fn spmm(&self, x: &DenseMat) -> Result<DenseMat> {
        if self.n != x.rows {
            return Err(Error::DimMismatch {
                op: "spmm",
                details: format!("sparse {0}x{0} · dense {1}x{2}", self.n, x.rows, x.cols),
            });
        }
        let mut out = DenseMat::zeros(self.n, x.cols);
        for i in 0..self.n {
            let orow = out.row_mut(i);
            for (j, v) in self.row(i) {
                let xrow = x.row(j);
                for (o, &b) in orow.iter_mut().zip(xrow) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }

    /// Densify; intended for small matrices (oracles, eigensolver input).
    pub fn to_dense(&self) -> DenseMat {
        let mut m = DenseMat::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Stack matrices along the diagonal; no cross-block entries.
    pub fn block_diag(parts: &[&SparseSym]) -> SparseSym {
        let n: usize = parts.iter().map(|p| p.n).sum();
        let nnz: usize = parts.iter().map(|p| p.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        let mut offset = 0;
        for p in parts {
            for i in 0..p.n {
                for (j, v) in p.row(i) {
                    col_idx.push(offset + j);
                    values.push(v);
                }
                row_ptr.push(col_idx.len());
            }
            offset += p.n;
        }
        SparseSym {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }
}
