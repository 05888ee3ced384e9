// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod blockops;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod hankel;
pub mod io;
pub mod lqg;
pub mod lti;
pub mod sls;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
