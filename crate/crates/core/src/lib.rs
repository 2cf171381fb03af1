//! Nonnegative feature recovery by alternating thresholded decoding and
//! covariance updates, with moment equilibration and ground-truth
//! diagnostics for synthetic data.

pub mod analysis;
pub mod equilibrate;
pub mod error;
pub mod genmodel;
pub mod linalg;
pub mod matrix;
pub mod pinv;
pub mod purify;
pub mod rng;
pub mod simplex;

pub use error::{Error, Result};
pub use matrix::DenseMatrix;
