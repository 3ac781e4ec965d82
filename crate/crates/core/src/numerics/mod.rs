//! Shared numerical kernels: symmetric matrices, F distribution, random streams.

pub mod matrix;
pub mod rng;
pub mod special;

pub use matrix::{cholesky, cholesky_solve, logdet, spd_solve, trace_of_product, SymMatrix};
pub use rng::{derive_stream, std_normal, NormalSource, RngStream};
pub use special::{beta_reg, f_cdf, f_sf, ln_beta, ln_gamma};
