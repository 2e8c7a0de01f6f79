//! Dense Cholesky and structured Toeplitz solvers.

pub mod dense;
pub mod toeplitz;

pub use dense::{spd_factor, spd_logdet, spd_solve, SpdFactorization};
pub use toeplitz::{toeplitz_logdet, toeplitz_solve, ToeplitzOperator};
