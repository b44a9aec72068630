//! Chebyshev basis projection of node features.
//!
//! The filter basis is the polynomial sequence `T₀ = I`, `T₁ = L̃`,
//! `Tₖ = 2 L̃ Tₖ₋₁ − Tₖ₋₂` applied to a feature matrix, where `L̃` is the
//! rescaled Laplacian. Because the spectrum of `L̃` lies in `[−1, 1]`, the
//! recurrence is stable in 64-bit arithmetic without renormalization for the
//! small orders used here.

use crate::dense::DenseMat;
use crate::error::{Error, Result};
use crate::sparse::SparseSym;

/// Node features projected onto Chebyshev blocks `[T₀X, T₁X, …, T_{K−1}X]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChebBasis {
    /// One `n × f` block per polynomial order, lowest order first.
    pub blocks: Vec<DenseMat>,
}

impl ChebBasis {
    /// Polynomial order count `K`.
    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    /// The blocks concatenated column-wise into one `n × f·K` matrix.
    pub fn concat(&self) -> DenseMat {
        let refs: Vec<&DenseMat> = self.blocks.iter().collect();
        DenseMat::concat_cols(&refs).expect("blocks share row count")
    }
}

fn check_k(k_order: usize) -> Result<()> {
    if k_order == 0 {
        return Err(Error::Config {
            key: "k_order".into(),
            reason: "must be at least 1".into(),
        });
    }
    Ok(())
}

/// Project `x` onto the first `k_order` Chebyshev blocks of `lap`.
///
/// Cost is `O(K · nnz · f)`: each block after the first two is one sparse
/// product plus one subtraction.
pub fn project(lap: &SparseSym, x: &DenseMat, k_order: usize) -> Result<ChebBasis> {
    check_k(k_order)?;
    if lap.n() != x.rows {
        return Err(Error::DimMismatch {
            op: "project",
            details: format!("laplacian n = {}, features rows = {}", lap.n(), x.rows),
        });
    }
    let mut blocks: Vec<DenseMat> = Vec::with_capacity(k_order);
    blocks.push(x.clone());
    if k_order > 1 {
        blocks.push(lap.spmm(x)?);
    }
    for k in 2..k_order {
        let t = lap.spmm(&blocks[k - 1])?.scale(2.0).sub(&blocks[k - 2])?;
        blocks.push(t);
    }
    Ok(ChebBasis { blocks })
}

/// Two-relation product basis: all `K²` blocks
/// `X̄ᵢⱼ = Tᵢ(L̃⁽ᵃ⁾) Tⱼ(L̃⁽ᵇ⁾) X`, concatenated with `i` outer and `j` inner
/// (row-major over the index grid) into an `n × f·K²` matrix.
///
/// Product bases over more than two relations are not supported: their size
/// grows as `Kᴿ`, which is impractical beyond `R = 2`.
pub fn project_2d(
    lap_a: &SparseSym,
    lap_b: &SparseSym,
    x: &DenseMat,
    k_order: usize,
) -> Result<DenseMat> {
    check_k(k_order)?;
    if lap_a.n() != lap_b.n() {
        return Err(Error::DimMismatch {
            op: "project_2d",
            details: format!("laplacians differ: {} vs {}", lap_a.n(), lap_b.n()),
        });
    }
    let inner = project(lap_b, x, k_order)?;
    let mut grid: Vec<Option<DenseMat>> = vec![None; k_order * k_order];
    for (j, seed) in inner.blocks.iter().enumerate() {
        let outer = project(lap_a, seed, k_order)?;
        for (i, block) in outer.blocks.into_iter().enumerate() {
            grid[i * k_order + j] = Some(block);
        }
    }
    let blocks: Vec<DenseMat> = grid.into_iter().map(|b| b.expect("grid filled")).collect();
    let refs: Vec<&DenseMat> = blocks.iter().collect();
    DenseMat::concat_cols(&refs)
}
