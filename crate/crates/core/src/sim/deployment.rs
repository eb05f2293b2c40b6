//! Line and grid node placements.
//!
//! Lines put node 0 at the origin and node `K-1` at the far end; node 0 is
//! the producer and node `K-1` the reference consumer. Grids are numbered
//! row-major from the upper-left corner, so node 0 is the reference
//! consumer and node `K*K-1` (lower-right) the reference producer.

use super::channel::{distance_for_per, LossMatrix, PerCurve};

/// End-to-end extent of variable-density deployments, in metres.
pub const DEFAULT_EXTENT_M: f64 = 1120.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeploymentKind {
    /// Adjacent nodes `link_m` apart.
    LineFixed { link_m: f64 },
    /// End nodes `extent_m` apart.
    LineVariable { extent_m: f64 },
    GridFixed { link_m: f64 },
    /// Side length `extent_m`.
    GridVariable { extent_m: f64 },
}

impl DeploymentKind {
    pub fn line_fixed_per(per: f64) -> Self {
        Self::LineFixed {
            link_m: distance_for_per(per),
        }
    }

    pub fn grid_fixed_per(per: f64) -> Self {
        Self::GridFixed {
            link_m: distance_for_per(per),
        }
    }

    pub fn is_grid(&self) -> bool {
        matches!(self, Self::GridFixed { .. } | Self::GridVariable { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub kind: DeploymentKind,
    /// Nodes on the line, or on one side of the grid.
    pub k: usize,
    pub positions: Vec<(f64, f64)>,
}

impl Deployment {
    pub fn new(kind: DeploymentKind, k: usize) -> Result<Self, String> {
        if k < 2 {
            return Err(format!("K = {k}; at least 2 nodes per line or grid side"));
        }
        let spacing = match kind {
            DeploymentKind::LineFixed { link_m } | DeploymentKind::GridFixed { link_m } => link_m,
            DeploymentKind::LineVariable { extent_m }
            | DeploymentKind::GridVariable { extent_m } => extent_m / (k - 1) as f64,
        };
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(format!("non-positive node spacing {spacing}"));
        }
        let positions = if kind.is_grid() {
            (0..k * k)
                .map(|i| ((i % k) as f64 * spacing, (i / k) as f64 * spacing))
                .collect()
        } else {
            (0..k).map(|i| (i as f64 * spacing, 0.0)).collect()
        };
        Ok(Self { kind, k, positions })
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn spacing(&self) -> f64 {
        let (x, _) = self.positions[1];
        x
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.positions[a];
        let (xb, yb) = self.positions[b];
        (xa - xb).hypot(ya - yb)
    }

    pub fn reference_producer(&self) -> usize {
        if self.kind.is_grid() {
            self.node_count() - 1
        } else {
            0
        }
    }

    pub fn reference_consumer(&self) -> usize {
        if self.kind.is_grid() {
            0
        } else {
            self.node_count() - 1
        }
    }

    /// Lines have a single producer; in grids every node produces.
    pub fn default_producers(&self) -> Vec<usize> {
        if self.kind.is_grid() {
            (0..self.node_count()).collect()
        } else {
            vec![self.reference_producer()]
        }
    }

    pub fn loss_matrix(&self, curve: PerCurve) -> LossMatrix {
        LossMatrix::from_positions(&self.positions, curve)
    }
}

/// Positions and their distance-derived loss matrix.
pub fn build_deployment(
    kind: DeploymentKind,
    k: usize,
    curve: PerCurve,
) -> Result<(Deployment, LossMatrix), String> {
    let d = Deployment::new(kind, k)?;
    let loss = d.loss_matrix(curve);
    Ok((d, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::channel::per_from_distance;

    #[test]
    fn fixed_line_p20() {
        let (d, q) = build_deployment(DeploymentKind::line_fixed_per(0.2), 3, PerCurve::Step).unwrap();
        assert_eq!(d.spacing(), 263.0);
        assert_eq!(q.get(0, 1), 0.2);
        assert_eq!(q.get(2, 1), 0.2);
        assert_eq!(d.distance(0, 2), 526.0);
        assert_eq!(q.get(0, 2), 1.0);
    }

    #[test]
    fn variable_line_six_nodes() {
        for curve in [PerCurve::Step, PerCurve::Linear] {
            let (d, q) =
                build_deployment(DeploymentKind::LineVariable { extent_m: 1120.0 }, 6, curve).unwrap();
            assert!((d.spacing() - 224.0).abs() < 1e-9);
            assert!((d.distance(0, 5) - 1120.0).abs() < 1e-9);
            assert!(q.get(0, 1) < 0.10);
            assert_eq!(q.get(0, 2), 1.0);
            assert_eq!(q.get(0, 1), per_from_distance(224.0, curve));
        }
    }

    #[test]
    fn fixed_grid_diagonals_are_dead() {
        let (d, q) = build_deployment(DeploymentKind::grid_fixed_per(0.1), 2, PerCurve::Step).unwrap();
        assert_eq!(d.node_count(), 4);
        assert_eq!(q.get(0, 1), 0.1);
        assert_eq!(q.get(0, 2), 0.1);
        assert!((d.distance(0, 3) - 360.62).abs() < 0.01);
        assert_eq!(q.get(0, 3), 1.0);
        assert_eq!(d.reference_consumer(), 0);
        assert_eq!(d.reference_producer(), 3);
        assert_eq!(d.default_producers(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(Deployment::new(DeploymentKind::LineVariable { extent_m: 1120.0 }, 1).is_err());
        assert!(Deployment::new(DeploymentKind::LineFixed { link_m: 0.0 }, 3).is_err());
    }
}
