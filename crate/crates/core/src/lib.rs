// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attribution;
pub mod baselines;
pub mod data;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod registry;
pub mod scp;
pub mod snn;
pub mod store;
pub mod training;

pub use error::{Error, Result};
