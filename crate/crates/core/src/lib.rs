#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sampling;
pub mod synthetic;
pub mod theory;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, SvdFactors};
pub use rng::Rng;
