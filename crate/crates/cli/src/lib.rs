//! Experiment configuration, presets and orchestration behind the
//! `vardis-lab` binary.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod presets;
pub mod rsm_table;
