//! Population models and sample generation.
//!
//! Scores follow a common-factor model `Y = C P + Z D`: `P` holds the
//! factor loadings (factors x occasions) and `D` the unique loadings, chosen
//! so that every occasion has unit variance. Two populations are provided:
//!
//! * sphericity holds: one factor loading `sqrt(0.5)` on every occasion, so
//!   all correlations are 0.5 (compound symmetry);
//! * sphericity violated: a second factor loading `sqrt(0.3)` on odd
//!   occasions (1-based), raising odd-odd correlations to 0.8 while every
//!   other pair stays at 0.5.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{NormalSource, SymMatrix};

pub type CovarianceMatrix = SymMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sphericity {
    Holds,
    Violated,
}

impl Sphericity {
    pub fn as_str(self) -> &'static str {
        match self {
            Sphericity::Holds => "holds",
            Sphericity::Violated => "violated",
        }
    }
}

impl fmt::Display for Sphericity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Sphericity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "holds" | "hold" => Ok(Sphericity::Holds),
            "violated" | "violation" => Ok(Sphericity::Violated),
            other => Err(Error::Config(format!("unknown sphericity condition '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    m: usize,
    condition: Option<Sphericity>,
    loadings: DMatrix<f64>,
    uniqueness: Vec<f64>,
}

impl PopulationSpec {
    /// Population from an arbitrary loading pattern (factors x occasions).
    /// Unique loadings are derived so each occasion has unit variance.
    pub fn from_loadings(loadings: DMatrix<f64>) -> Result<Self> {
        let m = loadings.ncols();
        if m < 2 || loadings.nrows() == 0 {
            return Err(Error::Domain(format!(
                "loadings must be k x m with k >= 1 and m >= 2, got {}x{}",
                loadings.nrows(),
                m
            )));
        }
        let mut uniqueness = Vec::with_capacity(m);
        for c in 0..m {
            let communality: f64 = loadings.column(c).iter().map(|v| v * v).sum();
            if !(communality < 1.0) {
                return Err(Error::Domain(format!(
                    "occasion {} has communality {communality} >= 1",
                    c + 1
                )));
            }
            uniqueness.push((1.0 - communality).sqrt());
        }
        Ok(PopulationSpec {
            m,
            condition: None,
            loadings,
            uniqueness,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn condition(&self) -> Option<Sphericity> {
        self.condition
    }

    pub fn loadings(&self) -> &DMatrix<f64> {
        &self.loadings
    }

    /// Diagonal of `D` (square roots of the unique variances).
    pub fn uniqueness(&self) -> &[f64] {
        &self.uniqueness
    }

    pub fn factors(&self) -> usize {
        self.loadings.nrows()
    }
}

/// Builds one of the two simulation populations with `m` occasions.
pub fn make_spec(m: usize, condition: Sphericity) -> Result<PopulationSpec> {
    if m < 3 {
        return Err(Error::Domain(format!("need at least 3 occasions, got {m}")));
    }
    let general = 0.5f64.sqrt();
    let loadings = match condition {
        Sphericity::Holds => DMatrix::from_element(1, m, general),
        Sphericity::Violated => {
            let odd = 0.3f64.sqrt();
            DMatrix::from_fn(2, m, |f, c| match f {
                0 => general,
                // column c is occasion t = c + 1; t odd <=> c even
                _ if c % 2 == 0 => odd,
                _ => 0.0,
            })
        }
    };
    let mut spec = PopulationSpec::from_loadings(loadings)?;
    // pin the unique loadings to their exact decimal definitions
    spec.uniqueness = (0..m)
        .map(|c| match condition {
            Sphericity::Violated if c % 2 == 0 => 0.2f64.sqrt(),
            _ => 0.5f64.sqrt(),
        })
        .collect();
    spec.condition = Some(condition);
    Ok(spec)
}

/// `P'P + D^2`.
pub fn population_covariance(spec: &PopulationSpec) -> CovarianceMatrix {
    let p = &spec.loadings;
    SymMatrix::from_fn(spec.m, |i, j| {
        let common: f64 = p.column(i).dot(&p.column(j));
        if i == j {
            common + spec.uniqueness[i] * spec.uniqueness[i]
        } else {
            common
        }
    })
}

/// Complete `n x m` score matrix, one subject per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    scores: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn new(scores: DMatrix<f64>) -> Result<Self> {
        if scores.nrows() < 2 || scores.ncols() < 2 {
            return Err(Error::Domain(format!(
                "sample needs n >= 2 subjects and m >= 2 occasions, got {}x{}",
                scores.nrows(),
                scores.ncols()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("sample contains non-finite scores".into()));
        }
        Ok(SampleMatrix { scores })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension("ragged sample rows".into()));
        }
        SampleMatrix::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn m(&self) -> usize {
        self.scores.ncols()
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn occasion_means(&self) -> DVector<f64> {
        self.scores.row_mean().transpose()
    }

    pub fn subject_means(&self) -> DVector<f64> {
        self.scores.column_mean()
    }

    /// Centered crossproduct `sum_i (y_i - ybar)(y_i - ybar)'`.
    pub fn crossproduct(&self) -> SymMatrix {
        let means = self.scores.row_mean();
        let mut centered = self.scores.clone();
        for mut row in centered.row_iter_mut() {
            row -= &means;
        }
        SymMatrix::symmetrize(centered.transpose() * centered)
    }

    /// Sample covariance with divisor `n - 1`.
    pub fn covariance(&self) -> CovarianceMatrix {
        self.crossproduct().scale(1.0 / (self.n() as f64 - 1.0))
    }

    /// Writes the scores as comma-separated text with a `y1,...,ym` header.
    /// Values use 17 significant digits so they round-trip exactly.
    pub fn write_delimited<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.m()).map(|t| format!("y{t}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.scores.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Draws `n` independent subjects from `spec`.
///
/// Per subject the draw order is the factor scores then the `m` unique
/// scores, so a given stream always produces the same sample.
pub fn draw_sample<R: NormalSource>(spec: &PopulationSpec, n: usize, rng: &mut R) -> Result<SampleMatrix> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 subjects, got {n}")));
    }
    let k = spec.factors();
    let m = spec.m;
    let mut scores = DMatrix::zeros(n, m);
    let mut factor = vec![0.0; k];
    for i in 0..n {
        for c in factor.iter_mut() {
            *c = rng.next_normal();
        }
        for t in 0..m {
            let z = rng.next_normal();
            let common: f64 = (0..k).map(|f| factor[f] * spec.loadings[(f, t)]).sum();
            scores[(i, t)] = common + spec.uniqueness[t] * z;
        }
    }
    SampleMatrix::new(scores)
}
