//! Post-processing of simulation samples: metrics with confidence
//! intervals, the analytic gap model, response-surface fits and capacity
//! search.

mod capacity;
mod gap;
mod metrics;
mod rsm;

use thiserror::Error;

pub use capacity::{
    capacity_search, default_lambda_grid, CapacityKind, CapacityOutcome, DELAY_THRESHOLD_S,
    GAP_THRESHOLD,
};
pub use gap::expected_gap_model;
pub use metrics::{
    compute_metrics, pair_metrics, student_t_half_width, MetricSummary, ReplicationMetrics,
};
pub use rsm::{rsm_fit, RegressionModel, Term};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("no samples")]
    NoSamples,
    #[error("incomplete design: {0}")]
    IncompleteDesign(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
