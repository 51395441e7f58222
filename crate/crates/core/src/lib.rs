#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod detection;
pub mod error;
pub mod identification;
pub mod linalg;
pub mod monitor;
pub mod plant;
pub mod posterior;
pub mod rnn;
pub mod trainer;

pub use error::{Error, Result};
