//! Simulation laboratory for Type I error rates of repeated-measures
//! ANOVA and REML mixed models in one-group within-subject designs.

// `!(x > t)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datagen;
pub mod error;
pub mod harness;
pub mod mlm;
pub mod numerics;
pub mod ranova;

pub use error::{Error, Result};
