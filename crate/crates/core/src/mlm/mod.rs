//! REML mixed model for one-group repeated measures with CS or UN
//! covariance, and Wald F tests of the occasion effect.

mod inference;
mod reml;
mod report;
mod structure;

pub use inference::{
    kenward_roger, kenward_roger_details, occasion_contrast, ContrastTests, satterthwaite_ddf, wald_f, DdfMethod,
    KenwardRogerDetails, TestResult,
};
pub use reml::{reml_fit, reml_loglik, MlmFit, MAX_HALVINGS, MAX_ITERATIONS};
pub use report::diagnostic_report;
pub use structure::{BasisMatrix, CovStructure};
