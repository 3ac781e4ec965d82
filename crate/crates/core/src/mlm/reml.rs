//! REML estimation by Fisher scoring.
//!
//! The model is `y_i = beta + e_i`, `e_i ~ N(0, Sigma(theta))` for `n`
//! complete subjects. With the cell-means design `X = 1_n (x) I_m` and
//! `V = I_n (x) Sigma` the REML quantities reduce exactly to `m x m` work:
//!
//! * `X' V^-1 X = n Sigma^-1`, so the GLS estimate is the vector of occasion
//!   means for every `theta`;
//! * `-2 l_R = (n-1) log|Sigma| + m log n + tr(Sigma^-1 R)` up to the
//!   `(n-1) m log(2 pi)` constant, with `R` the centered crossproduct;
//! * the REML projection is `(I_n - J_n/n) (x) Sigma^-1`, giving expected
//!   information `(n-1)/2 tr(Sigma^-1 G_k Sigma^-1 G_l)`.

use nalgebra::{DMatrix, DVector};

use super::structure::{BasisMatrix, CovStructure};
use crate::datagen::SampleMatrix;
use crate::error::{Error, Result};
use crate::numerics::{cholesky, cholesky_solve, SymMatrix};

pub const MAX_ITERATIONS: usize = 200;
pub const MAX_HALVINGS: usize = 20;
pub const OBJECTIVE_TOLERANCE: f64 = 1e-10;
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Relative size of the full scoring step below which the gradient is taken
/// to be at its rounding floor.
pub const STEP_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MlmFit {
    pub structure: CovStructure,
    pub n: usize,
    pub m: usize,
    /// Occasion means (cell-means parameterization).
    pub beta: DVector<f64>,
    pub sigma: SymMatrix,
    pub theta: Vec<f64>,
    /// Expected REML information of `theta` at the estimate.
    pub info: SymMatrix,
    pub reml_loglik: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Objective pieces at one parameter value.
struct Evaluation {
    theta: Vec<f64>,
    sigma: SymMatrix,
    sigma_inv: DMatrix<f64>,
    neg2: f64,
    gradient: Vec<f64>,
}

/// Sufficient statistics of a balanced complete sample for REML.
struct RemlProblem {
    structure: CovStructure,
    basis: Vec<BasisMatrix>,
    crossproduct: DMatrix<f64>,
    n: usize,
    m: usize,
}

impl RemlProblem {
    fn new(sample: &SampleMatrix, structure: CovStructure) -> Self {
        RemlProblem {
            structure,
            basis: structure.basis(sample.m()),
            crossproduct: sample.crossproduct().into_matrix(),
            n: sample.n(),
            m: sample.m(),
        }
    }

    fn dof(&self) -> f64 {
        self.n as f64 - 1.0
    }

    fn evaluate(&self, theta: Vec<f64>) -> Result<Evaluation> {
        let sigma = self.structure.sigma(&theta, self.m)?;
        let l = cholesky(&sigma)?;
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let sigma_inv = cholesky_solve(&l, &DMatrix::identity(self.m, self.m));
        let a_r = &sigma_inv * &self.crossproduct;
        let neg2 = self.dof() * logdet + (self.m as f64) * (self.n as f64).ln() + a_r.trace();
        let a_r_a = &a_r * &sigma_inv;
        let gradient = self
            .basis
            .iter()
            .map(|g| self.dof() * g.trace_with(&sigma_inv) - g.trace_with(&a_r_a))
            .collect();
        Ok(Evaluation {
            theta,
            sigma,
            sigma_inv,
            neg2,
            gradient,
        })
    }

    fn information(&self, sigma_inv: &DMatrix<f64>) -> SymMatrix {
        let q = self.basis.len();
        let half = 0.5 * self.dof();
        let mut info = DMatrix::zeros(q, q);
        for k in 0..q {
            for l in 0..=k {
                let v = half * self.basis[k].trace_sandwich(sigma_inv, sigma_inv, &self.basis[l]);
                info[(k, l)] = v;
                info[(l, k)] = v;
            }
        }
        SymMatrix::new(info).expect("information is filled symmetrically")
    }

    fn loglik(&self, neg2: f64) -> f64 {
        let constant = self.dof() * self.m as f64 * (2.0 * std::f64::consts::PI).ln();
        -0.5 * (neg2 + constant)
    }
}

/// REML log-likelihood of `sample` at an arbitrary parameter value.
pub fn reml_loglik(sample: &SampleMatrix, structure: CovStructure, theta: &[f64]) -> Result<f64> {
    let problem = RemlProblem::new(sample, structure);
    let eval = problem.evaluate(theta.to_vec())?;
    Ok(problem.loglik(eval.neg2))
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn reml_fit(sample: &SampleMatrix, structure: CovStructure) -> Result<MlmFit> {
    let (n, m) = (sample.n(), sample.m());
    if structure == CovStructure::Unstructured && n <= m {
        return Err(Error::SingularFit(format!(
            "unstructured covariance needs n - 1 >= m (n={n}, m={m})"
        )));
    }
    let problem = RemlProblem::new(sample, structure);
    let start = structure.initial_theta(&sample.covariance());
    let mut current = problem.evaluate(start)?;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let info = problem.information(&current.sigma_inv);
        let score = DMatrix::from_iterator(current.gradient.len(), 1, current.gradient.iter().map(|g| -0.5 * g));
        let l = cholesky(&info).map_err(|_| Error::SingularFit("REML information is singular".into()))?;
        let delta = cholesky_solve(&l, &score);
        let step_size = delta.amax() / max_abs(&current.theta).max(1.0);

        let mut step = 1.0;
        let mut accepted: Option<Evaluation> = None;
        let mut fallback: Option<Evaluation> = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = current
                .theta
                .iter()
                .zip(delta.iter())
                .map(|(t, d)| t + step * d)
                .collect();
            if let Ok(eval) = problem.evaluate(candidate) {
                let slack = 1e-12 * current.neg2.abs().max(1.0);
                if eval.neg2 <= current.neg2 + slack {
                    accepted = Some(eval);
                    break;
                }
                fallback.get_or_insert(eval);
            }
            step *= 0.5;
        }
        let next = match (accepted, fallback) {
            (Some(e), _) => e,
            // positive definite but no descent: the objective is flat at
            // rounding level, so let the convergence test decide
            (None, Some(e)) => e,
            (None, None) => {
                return Err(Error::NotPositiveDefinite { index: 0, pivot: f64::NAN });
            }
        };

        let change = (next.neg2 - current.neg2).abs() / current.neg2.abs().max(1.0);
        current = next;
        // for nearly singular Sigma the absolute gradient cannot get below
        // ~eps |Sigma^-1|^2 |R|, while the scoring step still vanishes
        let stationary = max_abs(&current.gradient) < GRADIENT_TOLERANCE || step_size < STEP_TOLERANCE;
        if change < OBJECTIVE_TOLERANCE && stationary {
            converged = true;
            break;
        }
    }

    let info = problem.information(&current.sigma_inv);
    Ok(MlmFit {
        structure,
        n,
        m,
        beta: sample.occasion_means(),
        sigma: current.sigma,
        theta: current.theta,
        info,
        reml_loglik: problem.loglik(current.neg2),
        converged,
        iterations,
    })
}
