//! Robust minimax training over several domains: a model trained by SGD
//! against an adversarial distribution over domains.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domains;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod models;
pub mod regularizers;
pub mod schedules;
pub mod simplex;
pub mod trainer;

pub use error::{Error, Result};
pub use simplex::{LossVector, SimplexDistribution};
