use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numerics::SymMatrix;

/// Subject-level covariance structure. Both are linear in their parameters:
/// `Sigma(theta) = sum_k theta_k G_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovStructure {
    /// Compound symmetry, `theta = (sigma2, tau)`, `Sigma = sigma2 I + tau J`.
    CompoundSymmetry,
    /// Unstructured, one parameter per lower-triangle entry (row-major).
    Unstructured,
}

impl CovStructure {
    pub fn param_count(self, m: usize) -> usize {
        match self {
            CovStructure::CompoundSymmetry => 2,
            CovStructure::Unstructured => m * (m + 1) / 2,
        }
    }

    pub fn basis(self, m: usize) -> Vec<BasisMatrix> {
        match self {
            CovStructure::CompoundSymmetry => {
                let identity = (0..m).map(|i| (i, i, 1.0)).collect();
                let ones = (0..m).flat_map(|i| (0..m).map(move |j| (i, j, 1.0))).collect();
                vec![BasisMatrix(identity), BasisMatrix(ones)]
            }
            CovStructure::Unstructured => {
                let mut out = Vec::with_capacity(self.param_count(m));
                for i in 0..m {
                    for j in 0..=i {
                        let entries = if i == j {
                            vec![(i, i, 1.0)]
                        } else {
                            vec![(i, j, 1.0), (j, i, 1.0)]
                        };
                        out.push(BasisMatrix(entries));
                    }
                }
                out
            }
        }
    }

    pub fn sigma(self, theta: &[f64], m: usize) -> Result<SymMatrix> {
        if theta.len() != self.param_count(m) {
            return Err(Error::Dimension(format!(
                "{self} with m={m} needs {} parameters, got {}",
                self.param_count(m),
                theta.len()
            )));
        }
        Ok(match self {
            CovStructure::CompoundSymmetry => {
                SymMatrix::from_fn(m, |i, j| if i == j { theta[0] + theta[1] } else { theta[1] })
            }
            CovStructure::Unstructured => SymMatrix::from_fn(m, |i, j| theta[i * (i + 1) / 2 + j]),
        })
    }

    /// Starting point for scoring: a diagonal matrix built from `s`.
    pub(crate) fn initial_theta(self, s: &SymMatrix) -> Vec<f64> {
        let m = s.dim();
        match self {
            CovStructure::CompoundSymmetry => vec![s.trace() / m as f64, 0.0],
            CovStructure::Unstructured => {
                let mut theta = vec![0.0; self.param_count(m)];
                for i in 0..m {
                    theta[i * (i + 1) / 2 + i] = s.get(i, i);
                }
                theta
            }
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            CovStructure::CompoundSymmetry => "CS",
            CovStructure::Unstructured => "UN",
        }
    }
}

impl fmt::Display for CovStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// Sparse symmetric 0/1 basis matrix, stored as `(row, col, value)` with
/// both triangles present.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix(Vec<(usize, usize, f64)>);

impl BasisMatrix {
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.0
    }

    pub fn to_dense(&self, m: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(m, m);
        for &(i, j, v) in &self.0 {
            d[(i, j)] += v;
        }
        d
    }

    /// `tr(A G)`.
    pub fn trace_with(&self, a: &DMatrix<f64>) -> f64 {
        self.0.iter().map(|&(p, q, v)| v * a[(q, p)]).sum()
    }

    /// `tr(A G_self B G_other)`.
    pub fn trace_sandwich(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, other: &BasisMatrix) -> f64 {
        let mut s = 0.0;
        for &(p, q, v) in &self.0 {
            for &(r, t, w) in &other.0 {
                s += v * w * a[(t, p)] * b[(q, r)];
            }
        }
        s
    }

    /// `A G B` as a dense matrix.
    pub fn sandwich(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(a.nrows(), b.ncols());
        for &(p, q, v) in &self.0 {
            for c in 0..b.ncols() {
                let bqc = v * b[(q, c)];
                if bqc == 0.0 {
                    continue;
                }
                for r in 0..a.nrows() {
                    out[(r, c)] += a[(r, p)] * bqc;
                }
            }
        }
        out
    }

    /// `G B`.
    pub fn left_apply(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for &(p, q, v) in &self.0 {
            for c in 0..b.ncols() {
                out[(p, c)] += v * b[(q, c)];
            }
        }
        out
    }
}
