//! Dense symmetric eigendecomposition by the cyclic Jacobi method.
//!
//! Used for analysis (eigenvalue histograms) and as the oracle behind the
//! eigendomain identity tests. Intended for matrices up to a few hundred
//! rows; the rotation method is simple to audit and numerically robust at
//! that scale.

use crate::dense::DenseMat;
use crate::error::{Error, Result};

/// Maximum symmetry violation accepted on input.
const INPUT_SYM_TOL: f64 = 1e-10;
/// Upper bound on Jacobi sweeps; typical inputs converge in well under ten.
const MAX_SWEEPS: usize = 50;

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric
/// matrix, so that `m = U · diag(λ) · Uᵀ` with eigenvectors as the columns
/// of `U`.
pub fn symmetric_eigen(m: &DenseMat) -> Result<(Vec<f64>, DenseMat)> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::DimMismatch {
            op: "symmetric_eigen",
            details: format!("matrix is {}x{}", m.rows, m.cols),
        });
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (m[(i, j)] - m[(j, i)]).abs();
            if diff > INPUT_SYM_TOL {
                return Err(Error::NotSymmetric { row: i, col: j, diff });
            }
        }
    }
    if n == 0 {
        return Ok((Vec::new(), DenseMat::zeros(0, 0)));
    }

    // Cyclic Jacobi with the threshold strategy of the classic formulation:
    // sweep the strict upper triangle, annihilating each off-diagonal entry
    // with a plane rotation chosen for numerical stability.
    let mut a = m.clone();
    let mut v = DenseMat::identity(n);
    let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let mut b = d.clone();
    let mut z = vec![0.0; n];

    for sweep in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].abs();
            }
        }
        if off == 0.0 {
            return Ok(sort_ascending(d, v));
        }
        let tresh = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n {
            for q in (p + 1)..n {
                let g = 100.0 * a[(p, q)].abs();
                // Skip entries already negligible against both diagonals.
                if sweep > 3 && d[p].abs() + g == d[p].abs() && d[q].abs() + g == d[q].abs() {
                    a[(p, q)] = 0.0;
                } else if a[(p, q)].abs() > tresh {
                    let h = d[q] - d[p];
                    let t = if h.abs() + g == h.abs() {
                        a[(p, q)] / h
                    } else {
                        let theta = 0.5 * h / a[(p, q)];
                        let mut t = 1.0 / (theta.abs() + (theta * theta + 1.0).sqrt());
                        if theta < 0.0 {
                            t = -t;
                        }
                        t
                    };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    let tau = s / (1.0 + c);
                    let h = t * a[(p, q)];
                    z[p] -= h;
                    z[q] += h;
                    d[p] -= h;
                    d[q] += h;
                    a[(p, q)] = 0.0;
                    for j in 0..p {
                        rotate(&mut a, j, p, j, q, s, tau);
                    }
                    for j in (p + 1)..q {
                        rotate(&mut a, p, j, j, q, s, tau);
                    }
                    for j in (q + 1)..n {
                        rotate(&mut a, p, j, q, j, s, tau);
                    }
                    for j in 0..n {
                        rotate(&mut v, j, p, j, q, s, tau);
                    }
                }
            }
        }
        for i in 0..n {
            b[i] += z[i];
            d[i] = b[i];
            z[i] = 0.0;
        }
    }

    let mut off = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            off += a[(p, q)].abs();
        }
    }
    Err(Error::EigenNoConverge {
        sweeps: MAX_SWEEPS,
        off,
    })
}

#[inline]
fn rotate(a: &mut DenseMat, i: usize, j: usize, k: usize, l: usize, s: f64, tau: f64) {
    let g = a[(i, j)];
    let h = a[(k, l)];
    a[(i, j)] = g - s * (h + g * tau);
    a[(k, l)] = h + s * (g - h * tau);
}

fn sort_ascending(d: Vec<f64>, v: DenseMat) -> (Vec<f64>, DenseMat) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).expect("finite eigenvalues"));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut u = DenseMat::zeros(n, n);
    for (newcol, &oldcol) in order.iter().enumerate() {
        for row in 0..n {
            u[(row, newcol)] = v[(row, oldcol)];
        }
    }
    (eigenvalues, u)
}
