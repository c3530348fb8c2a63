// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod expr;
pub mod functions;
pub mod inequalities;
pub mod io;
pub mod kde;
pub mod measures;
pub mod numdiff;
pub mod operator;
pub mod oracle;
pub mod stats;

pub use error::{Error, Result};
pub use operator::{
    catalog, load_config, parse_config, ConfigFile, OperatorSpec, PresetInfo, Regime,
};
pub use stats::McEstimate;
