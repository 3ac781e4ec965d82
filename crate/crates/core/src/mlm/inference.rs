//! Wald F tests of the occasion effect with four denominator-df methods.
//!
//! Satterthwaite uses the Fai-Cornelius multi-df construction and
//! Kenward-Roger the 1997 procedure; both use the inverse expected REML
//! information `W`. For the balanced cell-means design the KR building
//! blocks are
//!
//! * `Phi = (X'V^-1X)^-1 = Sigma/n`
//! * `P_i = X' dV^-1/dtheta_i X = -n A G_i A`
//! * `Q_ij = X' dV^-1/dtheta_i V dV^-1/dtheta_j X = n A G_i A G_j A`
//!
//! with `A = Sigma^-1`. The second-derivative term is zero because both
//! structures are linear in `theta`.

use std::cell::OnceCell;
use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::reml::MlmFit;
use super::structure::BasisMatrix;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, f_sf, trace_of_product, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DdfMethod {
    /// `N - rank(X) = n m - m`.
    Residual,
    /// Within-subject df, `(n - 1)(m - 1)`.
    BetweenWithin,
    Satterthwaite,
    KenwardRoger,
}

impl DdfMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DdfMethod::Residual => "residual",
            DdfMethod::BetweenWithin => "between-within",
            DdfMethod::Satterthwaite => "satterthwaite",
            DdfMethod::KenwardRoger => "kenward-roger",
        }
    }
}

impl fmt::Display for DdfMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub method: DdfMethod,
    pub f: f64,
    pub df1: f64,
    pub ddf: f64,
    /// Kenward-Roger scale `lambda`; 1 for every other method.
    pub scale: f64,
    pub p: f64,
    /// Set when Kenward-Roger could not be applied and Satterthwaite was
    /// used instead.
    pub fallback: bool,
}

/// Successive-difference contrasts, `(m-1) x m`.
pub fn occasion_contrast(m: usize) -> DMatrix<f64> {
    assert!(m >= 2, "occasion contrast needs m >= 2");
    DMatrix::from_fn(m - 1, m, |r, c| {
        if c == r {
            1.0
        } else if c == r + 1 {
            -1.0
        } else {
            0.0
        }
    })
}

fn check_fit(fit: &MlmFit, l: &DMatrix<f64>) -> Result<()> {
    if !fit.converged {
        return Err(Error::NotConverged { iterations: fit.iterations });
    }
    if l.ncols() != fit.m || l.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "contrast must have {} columns, got {}x{}",
            fit.m,
            l.nrows(),
            l.ncols()
        )));
    }
    Ok(())
}

fn phi(fit: &MlmFit) -> DMatrix<f64> {
    fit.sigma.as_matrix() / fit.n as f64
}

/// `(L b)' (L C L')^-1 (L b) / rank`.
fn quadratic_f(l: &DMatrix<f64>, beta: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let lcl = SymMatrix::symmetrize(l * cov * l.transpose());
    let chol = cholesky(&lcl).map_err(|_| Error::SingularContrast)?;
    let lb = l * beta;
    let solved = crate::numerics::cholesky_solve(&chol, &DMatrix::from_column_slice(lb.len(), 1, lb.as_slice()));
    let q: f64 = lb.iter().zip(solved.iter()).map(|(a, b)| a * b).sum();
    Ok(q.max(0.0) / l.nrows() as f64)
}

pub fn wald_f(fit: &MlmFit, l: &DMatrix<f64>, method: DdfMethod) -> Result<TestResult> {
    ContrastTests::new(fit, l)?.test(method)
}

/// Fai-Cornelius denominator df for the hypothesis `L beta = 0`.
pub fn satterthwaite_ddf(fit: &MlmFit, l: &DMatrix<f64>) -> Result<f64> {
    ContrastTests::new(fit, l)?.satterthwaite_ddf()
}

pub fn kenward_roger(fit: &MlmFit, l: &DMatrix<f64>) -> Result<TestResult> {
    ContrastTests::new(fit, l)?.kenward_roger()
}

pub fn kenward_roger_details(fit: &MlmFit, l: &DMatrix<f64>) -> Result<KenwardRogerDetails> {
    ContrastTests::new(fit, l)?.kenward_roger_details()
}

/// Intermediate Kenward-Roger quantities, exposed for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct KenwardRogerDetails {
    pub phi_adjusted: DMatrix<f64>,
    pub a1: f64,
    pub a2: f64,
    pub e_star: f64,
    pub v_star: f64,
    pub lambda: f64,
    pub ddf: f64,
}

/// Tests of one hypothesis `L beta = 0` on one fit. The covariance
/// derivatives shared by Satterthwaite and Kenward-Roger are built once.
pub struct ContrastTests<'a> {
    fit: &'a MlmFit,
    l: &'a DMatrix<f64>,
    derivatives: OnceCell<Result<Derivatives>>,
}

impl<'a> ContrastTests<'a> {
    pub fn new(fit: &'a MlmFit, l: &'a DMatrix<f64>) -> Result<Self> {
        check_fit(fit, l)?;
        Ok(ContrastTests {
            fit,
            l,
            derivatives: OnceCell::new(),
        })
    }

    fn derivatives(&self) -> Result<&Derivatives> {
        self.derivatives
            .get_or_init(|| Derivatives::new(self.fit))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn test(&self, method: DdfMethod) -> Result<TestResult> {
        let (n, m) = (self.fit.n as f64, self.fit.m as f64);
        let df1 = self.l.nrows() as f64;
        let simple = |ddf: f64| -> Result<TestResult> {
            let f = quadratic_f(self.l, &self.fit.beta, &phi(self.fit))?;
            Ok(TestResult {
                method,
                f,
                df1,
                ddf,
                scale: 1.0,
                p: f_sf(f, df1, ddf)?,
                fallback: false,
            })
        };
        match method {
            DdfMethod::Residual => simple(n * m - m),
            DdfMethod::BetweenWithin => simple((n - 1.0) * (m - 1.0)),
            DdfMethod::Satterthwaite => simple(self.satterthwaite_ddf()?),
            DdfMethod::KenwardRoger => match self.kenward_roger() {
                Err(Error::AdjustmentFailed(_)) => {
                    let mut r = self.test(DdfMethod::Satterthwaite)?;
                    r.method = DdfMethod::KenwardRoger;
                    r.fallback = true;
                    Ok(r)
                }
                other => other,
            },
        }
    }

    pub fn satterthwaite_ddf(&self) -> Result<f64> {
        let d = self.derivatives()?;
        let l = self.l;
        let rank = l.nrows();
        let lphil = SymMatrix::symmetrize(l * &d.phi * l.transpose());
        cholesky(&lphil).map_err(|_| Error::SingularContrast)?;
        let eig = SymmetricEigen::new(lphil.into_matrix());
        let q = d.p.len();
        let mut nus = Vec::with_capacity(rank);
        for k in 0..rank {
            let lambda = eig.eigenvalues[k];
            let lk = eig.eigenvectors.column(k).transpose() * l;
            let v = &d.phi * lk.transpose();
            let outer = &v * v.transpose();
            // d(l Phi l')/d theta_i = -v' P_i v = -<P_i, v v'>
            let grad = DVector::from_iterator(q, d.p.iter().map(|pi| -pi.dot(&outer)));
            let var = (grad.transpose() * &d.w * &grad)[(0, 0)];
            if !(var > 0.0) {
                return Err(Error::Domain(format!("Satterthwaite variance {var} is not positive")));
            }
            nus.push(2.0 * lambda * lambda / var);
        }
        if rank == 1 {
            return Ok(nus[0]);
        }
        let e: f64 = nus.iter().filter(|&&nu| nu > 2.0).map(|nu| nu / (nu - 2.0)).sum();
        let r = rank as f64;
        if e > r {
            Ok(2.0 * e / (e - r))
        } else {
            Err(Error::Domain(format!(
                "Satterthwaite: E = {e} does not exceed the contrast rank {rank}"
            )))
        }
    }

    pub fn kenward_roger(&self) -> Result<TestResult> {
        let details = self.kenward_roger_details()?;
        let f = quadratic_f(self.l, &self.fit.beta, &details.phi_adjusted)?;
        let scaled = details.lambda * f;
        let df1 = self.l.nrows() as f64;
        Ok(TestResult {
            method: DdfMethod::KenwardRoger,
            f: scaled,
            df1,
            ddf: details.ddf,
            scale: details.lambda,
            p: f_sf(scaled, df1, details.ddf)?,
            fallback: false,
        })
    }

    pub fn kenward_roger_details(&self) -> Result<KenwardRogerDetails> {
        let d = self.derivatives()?;
        let (l, m) = (self.l, self.fit.m);
        let q = d.p.len();
        let a = &d.sigma_inv;

        // sum_ij W_ij (Q_ij - P_i Phi P_j)
        let h = d.w_combine_basis(m);
        let p_tilde = d.w_combine(&d.p);
        // Q-part per i is n (A G_i A) H_i A = -P_i H_i A, so the whole sum is
        // -sum_i P_i (H_i A + Phi Ptilde_i), done as one block product
        let h_a = &vstack(&h) * a;
        let phi_pt = hsplit(&(&d.phi * hstack(&p_tilde)), q);
        let inner = h_a + vstack(&phi_pt);
        let correction = -(hstack(&d.p) * inner);
        let lambda_mat = &d.phi * correction * &d.phi;
        let phi_adjusted = SymMatrix::symmetrize(&d.phi + lambda_mat * 2.0);
        cholesky(&phi_adjusted).map_err(|e| Error::AdjustmentFailed(format!("adjusted covariance: {e}")))?;

        let rank = l.nrows() as f64;
        let lphil = SymMatrix::symmetrize(l * &d.phi * l.transpose());
        let inner = lphil.spd_inverse().map_err(|_| Error::SingularContrast)?;
        let theta_mat = l.transpose() * inner.as_matrix() * l;

        let left = &theta_mat * &d.phi;
        let left_p = vstack(&hsplit(&(&left * hstack(&d.p)), q));
        let m_i = vsplit(&(left_p * &d.phi), q);
        let traces: Vec<f64> = m_i.iter().map(|mi| mi.trace()).collect();
        let m_tilde = d.w_combine(&m_i);
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        for i in 0..q {
            for j in 0..q {
                a1 += d.w[(i, j)] * traces[i] * traces[j];
            }
            a2 += trace_of_product(&m_i[i], &m_tilde[i]);
        }

        let b = (a1 + 6.0 * a2) / (2.0 * rank);
        let g = ((rank + 1.0) * a1 - (rank + 4.0) * a2) / ((rank + 2.0) * a2);
        let denom = 3.0 * rank + 2.0 * (1.0 - g);
        let c1 = g / denom;
        let c2 = (rank - g) / denom;
        let c3 = (rank + 2.0 - g) / denom;
        let e_star = 1.0 / (1.0 - a2 / rank);
        let v_star = (2.0 / rank) * (1.0 + c1 * b) / ((1.0 - c2 * b).powi(2) * (1.0 - c3 * b));
        let rho = v_star / (2.0 * e_star * e_star);
        let ddf = 4.0 + (rank + 2.0) / (rank * rho - 1.0);
        let lambda = ddf / (e_star * (ddf - 2.0));

        if !(ddf.is_finite() && ddf > 0.0 && lambda.is_finite() && lambda > 0.0) {
            return Err(Error::AdjustmentFailed(format!(
                "moment matching gave ddf={ddf}, lambda={lambda}"
            )));
        }
        Ok(KenwardRogerDetails {
            phi_adjusted: phi_adjusted.into_matrix(),
            a1,
            a2,
            e_star,
            v_star,
            lambda,
            ddf,
        })
    }
}

fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = blocks[0].shape();
    let mut out = DMatrix::zeros(r, c * blocks.len());
    for (k, b) in blocks.iter().enumerate() {
        out.columns_mut(k * c, c).copy_from(b);
    }
    out
}

fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = blocks[0].shape();
    let mut out = DMatrix::zeros(r * blocks.len(), c);
    for (k, b) in blocks.iter().enumerate() {
        out.rows_mut(k * r, r).copy_from(b);
    }
    out
}

fn hsplit(m: &DMatrix<f64>, parts: usize) -> Vec<DMatrix<f64>> {
    let c = m.ncols() / parts;
    (0..parts).map(|k| m.columns(k * c, c).into_owned()).collect()
}

fn vsplit(m: &DMatrix<f64>, parts: usize) -> Vec<DMatrix<f64>> {
    let r = m.nrows() / parts;
    (0..parts).map(|k| m.rows(k * r, r).into_owned()).collect()
}

/// `Phi`, the `P_i` and `W` evaluated at the REML estimate.
struct Derivatives {
    basis: Vec<BasisMatrix>,
    sigma_inv: DMatrix<f64>,
    phi: DMatrix<f64>,
    p: Vec<DMatrix<f64>>,
    w: DMatrix<f64>,
}

impl Derivatives {
    fn new(fit: &MlmFit) -> Result<Self> {
        let basis = fit.structure.basis(fit.m);
        let sigma_inv = fit.sigma.spd_inverse()?.into_matrix();
        let n = fit.n as f64;
        let p = basis.iter().map(|g| g.sandwich(&sigma_inv, &sigma_inv) * -n).collect();
        let w = fit
            .info
            .spd_inverse()
            .map_err(|_| Error::SingularFit("REML information is singular".into()))?
            .into_matrix();
        Ok(Derivatives {
            basis,
            sigma_inv,
            phi: phi(fit),
            p,
            w,
        })
    }

    /// `sum_j W_ij M_j` for every `i`.
    fn w_combine(&self, mats: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        let (r, c) = mats[0].shape();
        // one GEMM: W (q x q) times the matrices stacked as rows (q x rc)
        let stacked = DMatrix::from_fn(mats.len(), r * c, |j, k| mats[j].as_slice()[k]);
        let combined = &self.w * stacked;
        (0..mats.len())
            .map(|i| DMatrix::from_iterator(r, c, combined.row(i).iter().copied()))
            .collect()
    }

    /// `H_i = sum_j W_ij G_j` for every `i`.
    fn w_combine_basis(&self, m: usize) -> Vec<DMatrix<f64>> {
        (0..self.basis.len())
            .map(|i| {
                let mut acc = DMatrix::zeros(m, m);
                for (j, g) in self.basis.iter().enumerate() {
                    let wij = self.w[(i, j)];
                    for &(p, q, v) in g.entries() {
                        acc[(p, q)] += wij * v;
                    }
                }
                acc
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{draw_sample, make_spec, SampleMatrix, Sphericity};
    use crate::mlm::{reml_fit, CovStructure};
    use crate::numerics::derive_stream;

    fn sample(m: usize, n: usize, cond: Sphericity, rep: u64) -> SampleMatrix {
        let spec = make_spec(m, cond).unwrap();
        draw_sample(&spec, n, &mut derive_stream(5, 17, rep)).unwrap()
    }

    #[test]
    fn contrast_shapes() {
        assert_eq!(occasion_contrast(2), DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert_eq!(
            occasion_contrast(3),
            DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0])
        );
    }

    #[test]
    fn fixed_df_methods() {
        let s = sample(9, 15, Sphericity::Holds, 0);
        let fit = reml_fit(&s, CovStructure::Unstructured).unwrap();
        let l = occasion_contrast(9);
        assert_eq!(wald_f(&fit, &l, DdfMethod::Residual).unwrap().ddf, 126.0);
        assert_eq!(wald_f(&fit, &l, DdfMethod::BetweenWithin).unwrap().ddf, 112.0);
    }

    #[test]
    fn equal_means_give_zero_f() {
        // every column is a permutation of the same values
        let rows = vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 3.0, 1.0],
            vec![3.0, 1.0, 2.0],
            vec![0.0, 5.0, 1.0],
            vec![5.0, 0.0, 4.0],
        ];
        let s = SampleMatrix::from_rows(&rows).unwrap();
        let fit = reml_fit(&s, CovStructure::Unstructured).unwrap();
        for method in [DdfMethod::Residual, DdfMethod::BetweenWithin, DdfMethod::Satterthwaite] {
            let r = wald_f(&fit, &occasion_contrast(3), method).unwrap();
            assert!(r.f.abs() < 1e-12, "{method}: F={}", r.f);
            assert!((r.p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kr_adjustment_vanishes_for_balanced_data() {
        let s = sample(9, 20, Sphericity::Violated, 3);
        for structure in [CovStructure::CompoundSymmetry, CovStructure::Unstructured] {
            let fit = reml_fit(&s, structure).unwrap();
            let det = kenward_roger_details(&fit, &occasion_contrast(9)).unwrap();
            let phi = fit.sigma.as_matrix() / 20.0;
            assert!((det.phi_adjusted - &phi).abs().max() < 1e-10 * phi.abs().max());
        }
    }

    #[test]
    fn rejects_unconverged_fit() {
        let s = sample(9, 20, Sphericity::Holds, 4);
        let mut fit = reml_fit(&s, CovStructure::CompoundSymmetry).unwrap();
        fit.converged = false;
        assert!(matches!(
            wald_f(&fit, &occasion_contrast(9), DdfMethod::Residual),
            Err(Error::NotConverged { .. })
        ));
    }
}
