// Validation uses `!(x > 0.0)` so that NaN is rejected along with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod datalab;
pub mod denoise;
pub mod denselin;
pub mod diffops;
pub mod dimred;
pub mod dmdcore;
pub mod error;
pub mod field;
pub mod metrics;
pub mod ppds;
pub mod prox;

pub use error::{Error, Result};
pub use field::{Dims, Field};
