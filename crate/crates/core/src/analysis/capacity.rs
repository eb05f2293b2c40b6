use super::{AnalysisError, MetricSummary};

pub const GAP_THRESHOLD: f64 = 1.5;
pub const DELAY_THRESHOLD_S: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityKind {
    /// Mean sequence-number gap below [`GAP_THRESHOLD`].
    Reliability,
    /// Mean update delay below [`DELAY_THRESHOLD_S`].
    Delay,
}

impl CapacityKind {
    /// Whether a point passes, judged at the upper end of its confidence
    /// interval.
    pub fn satisfied_by(self, m: &MetricSummary) -> bool {
        let upper = |v: f64, ci: Option<f64>| v + ci.unwrap_or(0.0);
        match self {
            CapacityKind::Reliability => m
                .mean_gap
                .is_some_and(|g| upper(g, m.gap_ci95) < GAP_THRESHOLD),
            CapacityKind::Delay => upper(m.mean_delay, m.delay_ci95) < DELAY_THRESHOLD_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CapacityOutcome {
    /// Smallest update period on the grid meeting the threshold.
    Feasible(f64),
    Infeasible,
}

impl CapacityOutcome {
    /// Updates per second per node; zero when infeasible.
    pub fn rate_hz(self) -> f64 {
        match self {
            CapacityOutcome::Feasible(l) => 1.0 / l,
            CapacityOutcome::Infeasible => 0.0,
        }
    }
}

/// Update periods 0.15 s to 0.5 s in 25 ms steps, then 0.75, 1, 1.5, 2 s.
pub fn default_lambda_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (0..=14).map(|i| (150.0 + 25.0 * f64::from(i)) / 1000.0).collect();
    g.extend([0.75, 1.0, 1.5, 2.0]);
    g
}

/// Walks the ascending `grid` and returns the first update period whose
/// metrics meet `kind`'s threshold. Points without samples never pass.
pub fn capacity_search<F>(
    grid: &[f64],
    kind: CapacityKind,
    mut evaluate: F,
) -> Result<CapacityOutcome, AnalysisError>
where
    F: FnMut(f64) -> Result<MetricSummary, AnalysisError>,
{
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(AnalysisError::InvalidInput("update-period grid must be strictly ascending".into()));
    }
    for &lambda in grid {
        match evaluate(lambda) {
            Ok(m) if kind.satisfied_by(&m) => return Ok(CapacityOutcome::Feasible(lambda)),
            Ok(_) | Err(AnalysisError::NoSamples) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(CapacityOutcome::Infeasible)
}
