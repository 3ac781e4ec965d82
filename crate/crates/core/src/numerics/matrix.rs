//! Dense symmetric-matrix kernels.
//!
//! Storage and products go through `nalgebra`; the factorisation is done here
//! so that degeneracy is judged by one rule everywhere: a pivot is rejected
//! when it is at or below `1e-12 * max(diag)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative pivot threshold for Cholesky.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Square matrix with exactly symmetric entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square or non-symmetric input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let d = m.nrows();
        for i in 0..d {
            for j in 0..i {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::Dimension(format!(
                        "entries ({i},{j}) and ({j},{i}) differ"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Averages `m` with its transpose. Use for products that are symmetric
    /// in exact arithmetic but not bitwise.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize needs a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_fn(diag.len(), |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn scale(&self, k: f64) -> SymMatrix {
        SymMatrix(&self.0 * k)
    }

    /// Inverse of a positive definite matrix.
    pub fn spd_inverse(&self) -> Result<SymMatrix> {
        let l = cholesky(self)?;
        let n = self.dim();
        // column-major: entry (r, c) lives at r + n * c
        let ls = l.as_slice();
        let mut inv = vec![0.0; n * n];
        for c in 0..n {
            inv[c + n * c] = 1.0 / ls[c + n * c];
            for r in (c + 1)..n {
                let mut s = 0.0;
                for k in c..r {
                    s += ls[r + n * k] * inv[k + n * c];
                }
                inv[r + n * c] = -s / ls[r + n * r];
            }
        }
        // (L L')^-1 = L^-T L^-1 with L^-1 lower triangular
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let (ci, cj) = (&inv[n * i..n * i + n], &inv[n * j..n * j + n]);
                let s: f64 = ci[i..].iter().zip(&cj[i..]).map(|(a, b)| a * b).sum();
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        Ok(SymMatrix(out))
    }
}

/// Lower Cholesky factor `L` with `L L' = a`.
pub fn cholesky(a: &SymMatrix) -> Result<DMatrix<f64>> {
    let n = a.dim();
    let m = a.as_matrix();
    let max_diag = (0..n).fold(0.0_f64, |acc, i| acc.max(m[(i, i)]));
    let threshold = PIVOT_TOLERANCE * max_diag;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > threshold) || max_diag <= 0.0 {
            return Err(Error::NotPositiveDefinite { index: j, pivot: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves `L L' x = b` given the lower factor.
pub fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(b.nrows(), l.nrows(), "right-hand side has wrong row count");
    let mut x = b.clone();
    // L has a strictly positive diagonal, so neither solve can fail
    l.solve_lower_triangular_mut(&mut x);
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

pub fn spd_solve(a: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.dim() {
        return Err(Error::Dimension(format!(
            "spd_solve: a is {0}x{0} but b has {1} rows",
            a.dim(),
            b.nrows()
        )));
    }
    let l = cholesky(a)?;
    Ok(cholesky_solve(&l, b))
}

/// `log |a|` as `2 * sum(log L_ii)`.
pub fn logdet(a: &SymMatrix) -> Result<f64> {
    let l = cholesky(a)?;
    Ok(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// `tr(a b)` without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}
