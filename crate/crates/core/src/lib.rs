//! Scalable Gaussian-process forecasting for hourly traffic series.
//!
//! Local GP experts are trained on disjoint shards and pulled to a common set
//! of hyperparameters by consensus ADMM; their predictions are then combined
//! with product-of-experts weights chosen on validation points.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod admm;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gp;
pub mod kernel;
pub mod linalg;
pub mod optim;

pub use error::{Error, Result};
