//! Commuting-flow prediction and what-if scenario evaluation over census tracts.

// `!(x > y)` is used on purpose so that NaN fails validation checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod gat;
pub mod geodata;
pub mod numeric;
pub mod gbrt;
pub mod metrics;
pub mod trainer;
pub mod model;
pub mod synth;
pub mod scenario;
