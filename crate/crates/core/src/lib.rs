// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod criteria;
pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod mcmc;
pub mod model;
pub mod qmra;
pub mod risk;
pub mod rng;
pub mod stats;
pub mod svg;
pub mod synth;

pub use error::{Error, Result};
