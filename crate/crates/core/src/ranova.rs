//! One-group repeated-measures ANOVA with sphericity corrections.
//!
//! Greenhouse-Geisser epsilon uses the Box trace form on an orthonormal
//! contrast basis; Huynh-Feldt uses the classic one-group formula and is
//! clamped at 1 (the raw value is kept on the result).

use nalgebra::DMatrix;

use crate::datagen::{CovarianceMatrix, SampleMatrix};
use crate::error::{Error, Result};
use crate::numerics::{f_sf, trace_of_product};

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaResult {
    pub f: f64,
    pub df1: usize,
    pub df2: usize,
    pub p_uncorrected: f64,
    pub eps_gg: f64,
    pub eps_hf: f64,
    /// Huynh-Feldt epsilon before clamping at 1.
    pub eps_hf_raw: f64,
    pub p_gg: f64,
    pub p_hf: f64,
    pub ss_time: f64,
    pub ss_subject: f64,
    pub ss_error: f64,
}

impl AnovaResult {
    pub fn ms_error(&self) -> f64 {
        self.ss_error / self.df2 as f64
    }

    pub fn ms_subject(&self, n: usize) -> f64 {
        self.ss_subject / (n as f64 - 1.0)
    }
}

/// Helmert-style orthonormal contrasts: `(m-1) x m`, rows orthonormal and
/// orthogonal to the constant vector.
pub fn helmert_contrasts(m: usize) -> DMatrix<f64> {
    assert!(m >= 2, "contrasts need m >= 2");
    DMatrix::from_fn(m - 1, m, |r, c| {
        let k = (r + 1) as f64;
        let norm = (k * (k + 1.0)).sqrt();
        if c <= r {
            1.0 / norm
        } else if c == r + 1 {
            -k / norm
        } else {
            0.0
        }
    })
}

pub fn fit_ranova(sample: &SampleMatrix) -> Result<AnovaResult> {
    let n = sample.n();
    let m = sample.m();
    let y = sample.scores();
    let occ = sample.occasion_means();
    let subj = sample.subject_means();
    let grand = occ.mean();

    let ss_time = n as f64 * occ.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let ss_subject = m as f64 * subj.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let mut ss_error = 0.0;
    let mut ss_total = 0.0;
    for i in 0..n {
        for t in 0..m {
            ss_error += (y[(i, t)] - occ[t] - subj[i] + grand).powi(2);
            ss_total += (y[(i, t)] - grand).powi(2);
        }
    }
    if !(ss_error > 1e-12 * ss_total) {
        return Err(Error::DegenerateData(
            "error sum of squares is zero: all subjects share one occasion profile".into(),
        ));
    }

    let df1 = m - 1;
    let df2 = (n - 1) * (m - 1);
    let f = (ss_time / df1 as f64) / (ss_error / df2 as f64);
    let p_uncorrected = f_sf(f, df1 as f64, df2 as f64)?;

    let eps_gg = gg_epsilon(&sample.covariance())?;
    let eps_hf_raw = hf_epsilon_raw(eps_gg, n, m)?;
    let eps_hf = eps_hf_raw.min(1.0);
    let p_gg = corrected_p(f, df1 as f64, df2 as f64, eps_gg)?;
    let p_hf = corrected_p(f, df1 as f64, df2 as f64, eps_hf)?;

    Ok(AnovaResult {
        f,
        df1,
        df2,
        p_uncorrected,
        eps_gg,
        eps_hf,
        eps_hf_raw,
        p_gg,
        p_hf,
        ss_time,
        ss_subject,
        ss_error,
    })
}

/// Greenhouse-Geisser epsilon `tr(M)^2 / ((m-1) tr(M^2))` with `M = C S C'`.
pub fn gg_epsilon(s: &CovarianceMatrix) -> Result<f64> {
    gg_epsilon_with_basis(s, &helmert_contrasts(s.dim()))
}

/// Same as [`gg_epsilon`] for a caller-supplied orthonormal contrast basis.
pub fn gg_epsilon_with_basis(s: &CovarianceMatrix, c: &DMatrix<f64>) -> Result<f64> {
    let m = s.dim();
    if c.ncols() != m || c.nrows() != m - 1 {
        return Err(Error::Dimension(format!(
            "contrast basis must be {}x{m}, got {}x{}",
            m - 1,
            c.nrows(),
            c.ncols()
        )));
    }
    let mm = c * s.as_matrix() * c.transpose();
    let tr = mm.trace();
    let tr_sq = trace_of_product(&mm, &mm);
    if !(tr_sq > 0.0) {
        return Err(Error::DegenerateData("tr(M^2) is zero in epsilon".into()));
    }
    Ok(tr * tr / ((m as f64 - 1.0) * tr_sq))
}

fn check_gg(eps_gg: f64, n: usize, m: usize) -> Result<()> {
    if m < 2 || n < 2 {
        return Err(Error::Domain(format!("Huynh-Feldt needs n, m >= 2 (n={n}, m={m})")));
    }
    let lower = 1.0 / (m as f64 - 1.0);
    if !(eps_gg >= lower - 1e-12 && eps_gg <= 1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "GG epsilon {eps_gg} outside [{lower}, 1]"
        )));
    }
    Ok(())
}

/// Unclamped Huynh-Feldt epsilon.
pub fn hf_epsilon_raw(eps_gg: f64, n: usize, m: usize) -> Result<f64> {
    check_gg(eps_gg, n, m)?;
    let (n, k) = (n as f64, m as f64 - 1.0);
    let denom = k * (n - 1.0 - k * eps_gg);
    if !(denom > 0.0) {
        return Err(Error::Domain(format!(
            "Huynh-Feldt denominator {denom} is not positive (n={n}, m={})",
            k + 1.0
        )));
    }
    Ok((n * k * eps_gg - 2.0) / denom)
}

/// Huynh-Feldt epsilon clamped at 1.
pub fn hf_epsilon(eps_gg: f64, n: usize, m: usize) -> Result<f64> {
    Ok(hf_epsilon_raw(eps_gg, n, m)?.min(1.0))
}

/// Upper-tail p of `f` against `F(eps * df1, eps * df2)`.
pub fn corrected_p(f: f64, df1: f64, df2: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("epsilon must be in (0, 1], got {eps}")));
    }
    f_sf(f, eps * df1, eps * df2)
}
