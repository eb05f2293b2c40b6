//! Beaconing protocol (BP), the VarDis variable-dissemination protocol, a
//! flooding comparator, a deterministic lossy-broadcast simulator, a
//! Markov-chain delay oracle and the analysis used to evaluate them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod bp;
pub mod dtmc;
pub mod flooding;
pub mod sim;
pub mod vardis;
pub mod wire;
