//! Deterministic Monte Carlo engine for Type I error rates.
//!
//! Every replication draws one sample from its own stream
//! `derive_stream(master_seed, condition_id, rep)` and feeds it to every
//! requested method. Per-method tallies are plain counts, so the result does
//! not depend on how replications are scheduled across workers.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::datagen::{draw_sample, make_spec, SampleMatrix, Sphericity};
use crate::error::{Error, Result};
use crate::mlm::{occasion_contrast, reml_fit, ContrastTests, CovStructure, DdfMethod, TestResult};
use crate::numerics::{derive_stream, RngStream};
use crate::ranova::fit_ranova;

pub const BRADLEY_LOWER: f64 = 0.025;
pub const BRADLEY_UPPER: f64 = 0.075;
pub const DEFAULT_REPLICATIONS: usize = 5000;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const GRID_M: [usize; 2] = [9, 12];
pub const GRID_N: [usize; 4] = [15, 20, 25, 30];
pub const TABLE3_N: [usize; 3] = [15, 30, 100];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodSpec {
    Ranova,
    RanovaHf,
    MlmCsBw,
    MlmCsSat,
    MlmUnRes,
    MlmUnSat,
    MlmUnKr,
}

impl MethodSpec {
    pub const ALL: [MethodSpec; 7] = [
        MethodSpec::Ranova,
        MethodSpec::RanovaHf,
        MethodSpec::MlmCsBw,
        MethodSpec::MlmCsSat,
        MethodSpec::MlmUnRes,
        MethodSpec::MlmUnSat,
        MethodSpec::MlmUnKr,
    ];

    pub const UNSTRUCTURED: [MethodSpec; 3] =
        [MethodSpec::MlmUnRes, MethodSpec::MlmUnSat, MethodSpec::MlmUnKr];

    pub fn tag(self) -> &'static str {
        match self {
            MethodSpec::Ranova => "RANOVA",
            MethodSpec::RanovaHf => "RANOVA_HF",
            MethodSpec::MlmCsBw => "MLM_CS_BW",
            MethodSpec::MlmCsSat => "MLM_CS_SAT",
            MethodSpec::MlmUnRes => "MLM_UN_RES",
            MethodSpec::MlmUnSat => "MLM_UN_SAT",
            MethodSpec::MlmUnKr => "MLM_UN_KR",
        }
    }

    /// Label for the df treatment, as written to the results CSV.
    pub fn ddf_label(self) -> &'static str {
        match self {
            MethodSpec::Ranova => "uncorrected",
            MethodSpec::RanovaHf => "huynh-feldt",
            _ => self.mixed_model().expect("mixed-model method").1.as_str(),
        }
    }

    /// `(structure, ddf method)` for the mixed-model tags.
    pub fn mixed_model(self) -> Option<(CovStructure, DdfMethod)> {
        use CovStructure::*;
        match self {
            MethodSpec::Ranova | MethodSpec::RanovaHf => None,
            MethodSpec::MlmCsBw => Some((CompoundSymmetry, DdfMethod::BetweenWithin)),
            MethodSpec::MlmCsSat => Some((CompoundSymmetry, DdfMethod::Satterthwaite)),
            MethodSpec::MlmUnRes => Some((Unstructured, DdfMethod::Residual)),
            MethodSpec::MlmUnSat => Some((Unstructured, DdfMethod::Satterthwaite)),
            MethodSpec::MlmUnKr => Some((Unstructured, DdfMethod::KenwardRoger)),
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        MethodSpec::ALL
            .into_iter()
            .find(|m| m.tag() == norm)
            .ok_or_else(|| Error::Config(format!("unknown method '{}'", s.trim())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition {
    pub m: usize,
    pub n: usize,
    pub sphericity: Sphericity,
    pub replications: usize,
    pub alpha: f64,
}

impl Condition {
    pub fn new(m: usize, n: usize, sphericity: Sphericity, replications: usize, alpha: f64) -> Result<Self> {
        let c = Condition {
            m,
            n,
            sphericity,
            replications,
            alpha,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::Config(format!("m must be at least 3, got {}", self.m)));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Stable identifier: the first 8 bytes of SHA-256 over the canonical
    /// condition string. Used as the stream key, so extending a grid never
    /// changes the samples of existing conditions.
    pub fn id(&self) -> u64 {
        let canonical = format!(
            "m={};n={};sphericity={};reps={};alpha={:?}",
            self.m, self.n, self.sphericity, self.replications, self.alpha
        );
        let digest = Sha256::digest(canonical.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_be_bytes(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bradley {
    Conservative,
    Robust,
    Liberal,
}

impl Bradley {
    pub fn as_str(self) -> &'static str {
        match self {
            Bradley::Conservative => "conservative",
            Bradley::Robust => "robust",
            Bradley::Liberal => "liberal",
        }
    }
}

impl fmt::Display for Bradley {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bradley's liberal criterion at alpha = .05; both bounds count as robust.
pub fn classify_bradley(rate: f64) -> Bradley {
    if rate < BRADLEY_LOWER {
        Bradley::Conservative
    } else if rate > BRADLEY_UPPER {
        Bradley::Liberal
    } else {
        Bradley::Robust
    }
}

/// What one method did with one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Reject,
    Retain,
    Failed,
}

/// Per-method outcome plus whether KR fell back to Satterthwaite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Indicator {
    pub outcome: Outcome,
    pub fallback: bool,
}

fn indicator(p: Result<f64>, alpha: f64, fallback: bool) -> Indicator {
    let outcome = match p {
        Ok(p) if p < alpha => Outcome::Reject,
        Ok(_) => Outcome::Retain,
        Err(_) => Outcome::Failed,
    };
    Indicator { outcome, fallback }
}

fn mixed_tests(
    sample: &SampleMatrix,
    structure: CovStructure,
    methods: &[MethodSpec],
) -> Vec<(MethodSpec, Result<TestResult>)> {
    let wanted: Vec<MethodSpec> = methods
        .iter()
        .copied()
        .filter(|m| m.mixed_model().is_some_and(|(s, _)| s == structure))
        .collect();
    if wanted.is_empty() {
        return Vec::new();
    }
    let l = occasion_contrast(sample.m());
    let fit = reml_fit(sample, structure);
    let tests = fit.as_ref().map_err(Clone::clone).and_then(|f| ContrastTests::new(f, &l));
    wanted
        .into_iter()
        .map(|method| {
            let (_, ddf) = method.mixed_model().expect("filtered to mixed models");
            let r = match &tests {
                Ok(t) => t.test(ddf),
                Err(e) => Err(e.clone()),
            };
            (method, r)
        })
        .collect()
}

/// Applies every method in `methods` to one sample. The output is aligned
/// with `methods`; failures are reported per method.
pub fn evaluate_sample(sample: &SampleMatrix, methods: &[MethodSpec], alpha: f64) -> Vec<Indicator> {
    let anova = if methods.iter().any(|m| m.mixed_model().is_none()) {
        Some(fit_ranova(sample))
    } else {
        None
    };
    let mut mixed = mixed_tests(sample, CovStructure::CompoundSymmetry, methods);
    mixed.extend(mixed_tests(sample, CovStructure::Unstructured, methods));

    methods
        .iter()
        .map(|&method| match method {
            MethodSpec::Ranova | MethodSpec::RanovaHf => {
                let p = match anova.as_ref().expect("anova fitted when requested") {
                    Ok(a) if method == MethodSpec::Ranova => Ok(a.p_uncorrected),
                    Ok(a) => Ok(a.p_hf),
                    Err(e) => Err(e.clone()),
                };
                indicator(p, alpha, false)
            }
            _ => {
                let (_, r) = mixed
                    .iter()
                    .find(|(m, _)| *m == method)
                    .expect("every mixed method was evaluated");
                match r {
                    Ok(t) => indicator(Ok(t.p), alpha, t.fallback),
                    Err(e) => indicator(Err(e.clone()), alpha, false),
                }
            }
        })
        .collect()
}

/// Draws one sample for `cond` from `rng` and evaluates every method on it.
pub fn run_replication(cond: &Condition, methods: &[MethodSpec], rng: &mut RngStream) -> Result<Vec<Indicator>> {
    let spec = make_spec(cond.m, cond.sphericity)?;
    let sample = draw_sample(&spec, cond.n, rng)?;
    Ok(evaluate_sample(&sample, methods, cond.alpha))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    rejections: usize,
    valid: usize,
    failures: usize,
    fallbacks: usize,
}

impl Tally {
    fn add(mut self, ind: &Indicator) -> Self {
        match ind.outcome {
            Outcome::Reject => {
                self.rejections += 1;
                self.valid += 1;
            }
            Outcome::Retain => self.valid += 1,
            Outcome::Failed => self.failures += 1,
        }
        self.fallbacks += usize::from(ind.fallback);
        self
    }

    fn merge(self, o: Tally) -> Tally {
        Tally {
            rejections: self.rejections + o.rejections,
            valid: self.valid + o.valid,
            failures: self.failures + o.failures,
            fallbacks: self.fallbacks + o.fallbacks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionResult {
    pub condition: Condition,
    pub condition_id: u64,
    pub method: MethodSpec,
    pub rejections: usize,
    pub valid_reps: usize,
    /// `rejections / valid_reps`; NaN when no replication succeeded.
    pub rate: f64,
    pub mc_se: f64,
    pub classification: Option<Bradley>,
    pub n_failures: usize,
    /// KR fits that fell back to Satterthwaite (counted as valid).
    pub n_fallbacks: usize,
}

fn validate_methods(methods: &[MethodSpec]) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::Config("method list is empty".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::Config(format!("method {m} listed twice")));
        }
    }
    Ok(())
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

fn condition_on_pool(
    pool: &rayon::ThreadPool,
    cond: &Condition,
    methods: &[MethodSpec],
    master_seed: u64,
) -> Result<Vec<ConditionResult>> {
    cond.validate()?;
    validate_methods(methods)?;
    // fail on configuration problems (e.g. m < 3) before spawning work
    make_spec(cond.m, cond.sphericity)?;
    let id = cond.id();
    let empty = vec![Tally::default(); methods.len()];
    let tallies = pool.install(|| {
        (0..cond.replications as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = derive_stream(master_seed, id, rep);
                run_replication(cond, methods, &mut rng)
                    .unwrap_or_else(|_| vec![Indicator { outcome: Outcome::Failed, fallback: false }; methods.len()])
            })
            .fold(
                || empty.clone(),
                |acc, inds| acc.into_iter().zip(&inds).map(|(t, i)| t.add(i)).collect(),
            )
            .reduce(
                || empty.clone(),
                |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
            )
    });

    Ok(methods
        .iter()
        .zip(tallies)
        .map(|(&method, t)| {
            let rate = if t.valid > 0 {
                t.rejections as f64 / t.valid as f64
            } else {
                f64::NAN
            };
            let mc_se = (rate * (1.0 - rate) / t.valid as f64).sqrt();
            ConditionResult {
                condition: *cond,
                condition_id: id,
                method,
                rejections: t.rejections,
                valid_reps: t.valid,
                rate,
                mc_se,
                classification: (t.valid > 0).then(|| classify_bradley(rate)),
                n_failures: t.failures,
                n_fallbacks: t.fallbacks,
            }
        })
        .collect())
}

/// Runs all replications of one condition on `workers` threads.
pub fn run_condition(
    cond: &Condition,
    methods: &[MethodSpec],
    master_seed: u64,
    workers: usize,
) -> Result<Vec<ConditionResult>> {
    let pool = thread_pool(workers)?;
    condition_on_pool(&pool, cond, methods, master_seed)
}

/// A published rejection rate to compare against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRate {
    pub m: usize,
    pub n: usize,
    pub sphericity: Sphericity,
    pub method: MethodSpec,
    pub rate: f64,
}

/// Published MLM-UN rates (m = 12, sphericity holds, 5,000 replications).
pub const REFERENCE_RATES: [ReferenceRate; 9] = {
    const fn a(n: usize, method: MethodSpec, rate: f64) -> ReferenceRate {
        ReferenceRate {
            m: 12,
            n,
            sphericity: Sphericity::Holds,
            method,
            rate,
        }
    }
    [
        a(15, MethodSpec::MlmUnRes, 0.5633),
        a(30, MethodSpec::MlmUnRes, 0.1956),
        a(100, MethodSpec::MlmUnRes, 0.0776),
        a(15, MethodSpec::MlmUnSat, 0.5633),
        a(30, MethodSpec::MlmUnSat, 0.1956),
        a(100, MethodSpec::MlmUnSat, 0.0776),
        a(15, MethodSpec::MlmUnKr, 0.3687),
        a(30, MethodSpec::MlmUnKr, 0.0986),
        a(100, MethodSpec::MlmUnKr, 0.0566),
    ]
};

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorComparison {
    pub anchor: ReferenceRate,
    pub observed: f64,
    pub mc_se: f64,
    pub abs_diff: f64,
    /// `|observed - anchor|` in units of the Monte Carlo standard error.
    pub diff_in_se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub master_seed: u64,
    pub results: Vec<ConditionResult>,
    pub anchors: Vec<AnchorComparison>,
}

/// Runs every condition of `grid` with the same method list.
pub fn run_grid(grid: &[Condition], methods: &[MethodSpec], master_seed: u64, workers: usize) -> Result<GridReport> {
    if grid.is_empty() {
        return Err(Error::Config("condition grid is empty".into()));
    }
    validate_methods(methods)?;
    for c in grid {
        c.validate()?;
    }
    let pool = thread_pool(workers)?;
    let mut results = Vec::with_capacity(grid.len() * methods.len());
    for cond in grid {
        results.extend(condition_on_pool(&pool, cond, methods, master_seed)?);
    }
    let anchors = compare_anchors(&results);
    Ok(GridReport {
        master_seed,
        results,
        anchors,
    })
}

fn compare_anchors(results: &[ConditionResult]) -> Vec<AnchorComparison> {
    REFERENCE_RATES
        .iter()
        .filter_map(|anchor| {
            let r = results.iter().find(|r| {
                r.condition.m == anchor.m
                    && r.condition.n == anchor.n
                    && r.condition.sphericity == anchor.sphericity
                    && r.method == anchor.method
                    && r.valid_reps > 0
            })?;
            let abs_diff = (r.rate - anchor.rate).abs();
            Some(AnchorComparison {
                anchor: *anchor,
                observed: r.rate,
                mc_se: r.mc_se,
                abs_diff,
                diff_in_se: abs_diff / r.mc_se,
            })
        })
        .collect()
}

/// The full simulation grid: m in {9, 12}, n in {15, 20, 25, 30}, both
/// populations.
pub fn paper_grid(replications: usize, alpha: f64) -> Result<Vec<Condition>> {
    let mut grid = Vec::new();
    for sphericity in [Sphericity::Holds, Sphericity::Violated] {
        for m in GRID_M {
            for n in GRID_N {
                grid.push(Condition::new(m, n, sphericity, replications, alpha)?);
            }
        }
    }
    Ok(grid)
}

/// The sample-size follow-up: m = 12, sphericity holds, n in {15, 30, 100}.
pub fn table3_grid(replications: usize, alpha: f64) -> Result<Vec<Condition>> {
    TABLE3_N
        .iter()
        .map(|&n| Condition::new(12, n, Sphericity::Holds, replications, alpha))
        .collect()
}

/// Formats `x` as a plain decimal with 6 significant digits.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return "NA".to_string();
    }
    if x == 0.0 {
        return "0.00000".to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

pub const CSV_HEADER: &str =
    "condition_id,m,n,sphericity,method,ddf_method,replications,valid_reps,n_failures,rejections,rate,mc_se,bradley";

impl GridReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(128 * (self.results.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.results {
            let c = &r.condition;
            let _ = writeln!(
                out,
                "{:016x},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.condition_id,
                c.m,
                c.n,
                c.sphericity,
                r.method,
                r.method.ddf_label(),
                c.replications,
                r.valid_reps,
                r.n_failures,
                r.rejections,
                format_sig6(r.rate),
                format_sig6(r.mc_se),
                r.classification.map_or("NA", Bradley::as_str),
            );
        }
        out
    }

    /// Human-readable table with Bradley classes and anchor deviations.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Bradley criterion: robust if {BRADLEY_LOWER} <= rate <= {BRADLEY_UPPER} (bounds inclusive)"
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>3} {:>4} {:<9} {:<11} {:>9} {:>9} {:<12} {:>8} {:>9}",
            "m", "n", "sphericity", "method", "rate", "mc_se", "bradley", "failures", "fallbacks"
        );
        for r in &self.results {
            let c = &r.condition;
            let _ = writeln!(
                out,
                "{:>3} {:>4} {:<9} {:<11} {:>9} {:>9} {:<12} {:>8} {:>9}",
                c.m,
                c.n,
                c.sphericity,
                r.method.tag(),
                format!("{:.4}", r.rate),
                format!("{:.4}", r.mc_se),
                r.classification.map_or("NA", Bradley::as_str),
                r.n_failures,
                r.n_fallbacks,
            );
        }
        if !self.anchors.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "Published reference rates (m=12, sphericity holds):");
            for a in &self.anchors {
                let _ = writeln!(
                    out,
                    "  n={:<4} {:<11} reference {:.4}  observed {:.4}  |diff| {:.4} = {:.1} mc_se",
                    a.anchor.n,
                    a.anchor.method.tag(),
                    a.anchor.rate,
                    a.observed,
                    a.abs_diff,
                    a.diff_in_se
                );
            }
        }
        out
    }
}
