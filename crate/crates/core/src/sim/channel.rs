//! Distance-derived packet loss and the abstract lossy broadcast channel.

use rand::Rng;

/// PHY overhead added to every frame when computing airtime, in bytes.
pub const PHY_OVERHEAD_BYTES: usize = 27;
/// PHY data rate in bit/s.
pub const PHY_RATE_BPS: f64 = 36e6;

/// `(distance m, packet error rate)` anchors of the PER curve.
pub const PER_ANCHORS: [(f64, f64); 6] = [
    (0.0, 0.0),
    (255.0, 0.10),
    (263.0, 0.20),
    (273.0, 0.50),
    (280.0, 0.80),
    (294.0, 1.00),
];

/// How the PER curve behaves between anchors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerCurve {
    /// Holds each anchor's value up to the next anchor.
    #[default]
    Step,
    /// Linear interpolation between neighbouring anchors.
    Linear,
}

/// Packet error rate of a link of length `distance_m`.
pub fn per_from_distance(distance_m: f64, curve: PerCurve) -> f64 {
    assert!(distance_m >= 0.0, "negative distance");
    let last = PER_ANCHORS[PER_ANCHORS.len() - 1];
    if distance_m >= last.0 {
        return 1.0;
    }
    let i = PER_ANCHORS
        .windows(2)
        .position(|w| distance_m < w[1].0)
        .expect("distance below last anchor");
    let (d0, p0) = PER_ANCHORS[i];
    let (d1, p1) = PER_ANCHORS[i + 1];
    match curve {
        PerCurve::Step => p0,
        PerCurve::Linear => p0 + (p1 - p0) * (distance_m - d0) / (d1 - d0),
    }
}

/// Link length giving packet error rate `per`, inverting the linear curve.
/// For the anchor rates this is the anchor distance under either curve.
pub fn distance_for_per(per: f64) -> f64 {
    assert!((0.0..=1.0).contains(&per), "PER outside [0, 1]");
    let i = PER_ANCHORS
        .windows(2)
        .position(|w| per <= w[1].1)
        .expect("per within anchors");
    let (d0, p0) = PER_ANCHORS[i];
    let (d1, p1) = PER_ANCHORS[i + 1];
    if per == p1 {
        return d1;
    }
    d0 + (d1 - d0) * (per - p0) / (p1 - p0)
}

/// Time on air of a frame with `frame_bytes` of MAC payload.
pub fn airtime(frame_bytes: usize) -> f64 {
    (frame_bytes + PHY_OVERHEAD_BYTES) as f64 * 8.0 / PHY_RATE_BPS
}

/// Per-ordered-pair loss probabilities `q[i][j]`, with `q[i][i] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    n: usize,
    q: Vec<f64>,
}

impl LossMatrix {
    /// Builds from rows; diagonal entries are forced to zero.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let n = rows.len();
        if n == 0 {
            return Err("empty loss matrix".into());
        }
        let mut q = Vec::with_capacity(n * n);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != n {
                return Err(format!("row {i} has {} entries, expected {n}", row.len()));
            }
            for (j, p) in row.into_iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("q[{i}][{j}] = {p} outside [0, 1]"));
                }
                q.push(if i == j { 0.0 } else { p });
            }
        }
        Ok(Self { n, q })
    }

    pub fn from_positions(positions: &[(f64, f64)], curve: PerCurve) -> Self {
        let n = positions.len();
        let mut q = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let (xi, yi) = positions[i];
                    let (xj, yj) = positions[j];
                    q[i * n + j] = per_from_distance((xi - xj).hypot(yi - yj), curve);
                }
            }
        }
        Self { n, q }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.q[from * self.n + to]
    }

    pub fn set(&mut self, from: usize, to: usize, p: f64) {
        assert!((0.0..=1.0).contains(&p));
        if from != to {
            self.q[from * self.n + to] = p;
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.q.chunks(self.n)
    }

    /// Receivers that can hear `from` at all (`q < 1`), ascending.
    pub fn audible(&self, from: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&j| j != from && self.get(from, j) < 1.0)
            .collect()
    }
}

/// Lossy broadcast medium without carrier sensing or collisions.
#[derive(Debug, Clone)]
pub struct Channel {
    loss: LossMatrix,
    audible: Vec<Vec<usize>>,
}

impl Channel {
    pub fn new(loss: LossMatrix) -> Self {
        let audible = (0..loss.len()).map(|i| loss.audible(i)).collect();
        Self { loss, audible }
    }

    pub fn loss(&self) -> &LossMatrix {
        &self.loss
    }

    /// Receivers of one broadcast and the common arrival time. Each
    /// potential receiver is an independent Bernoulli trial drawn from `rng`.
    pub fn broadcast<R: Rng + ?Sized>(
        &self,
        sender: usize,
        frame_bytes: usize,
        now: f64,
        rng: &mut R,
        receivers: &mut Vec<usize>,
    ) -> f64 {
        receivers.clear();
        for &j in &self.audible[sender] {
            let q = self.loss.get(sender, j);
            if q == 0.0 || rng.random::<f64>() >= q {
                receivers.push(j);
            }
        }
        now + airtime(frame_bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anchor_values() {
        for curve in [PerCurve::Step, PerCurve::Linear] {
            assert_eq!(per_from_distance(263.0, curve), 0.20);
            assert_eq!(per_from_distance(255.0, curve), 0.10);
            assert_eq!(per_from_distance(273.0, curve), 0.50);
            assert_eq!(per_from_distance(280.0, curve), 0.80);
            assert_eq!(per_from_distance(294.0, curve), 1.0);
            assert_eq!(per_from_distance(350.0, curve), 1.0);
            assert_eq!(per_from_distance(0.0, curve), 0.0);
        }
    }

    #[test]
    fn between_anchors() {
        assert_eq!(per_from_distance(224.0, PerCurve::Step), 0.0);
        let lin = per_from_distance(224.0, PerCurve::Linear);
        assert!((lin - 0.1 * 224.0 / 255.0).abs() < 1e-12);
        assert!((per_from_distance(259.0, PerCurve::Linear) - 0.15).abs() < 1e-12);
        assert_eq!(per_from_distance(259.0, PerCurve::Step), 0.10);
    }

    #[test]
    fn inverse_hits_anchors() {
        assert_eq!(distance_for_per(0.2), 263.0);
        assert_eq!(distance_for_per(0.1), 255.0);
        assert_eq!(distance_for_per(0.5), 273.0);
        assert_eq!(distance_for_per(0.8), 280.0);
        assert!((distance_for_per(0.15) - 259.0).abs() < 1e-9);
    }

    #[test]
    fn airtime_of_fifty_byte_frame() {
        let t = airtime(50);
        assert!((t - 77.0 * 8.0 / 36e6).abs() < 1e-15);
        assert!((t - 17.1e-6).abs() < 0.05e-6);
    }

    #[test]
    fn total_loss_delivers_nothing_and_zero_loss_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rx = Vec::new();
        let deaf = Channel::new(LossMatrix::from_rows(vec![vec![1.0; 4]; 4]).unwrap());
        deaf.broadcast(0, 50, 0.0, &mut rng, &mut rx);
        assert!(rx.is_empty());
        let clear = Channel::new(LossMatrix::from_rows(vec![vec![0.0; 4]; 4]).unwrap());
        let at = clear.broadcast(1, 50, 2.0, &mut rng, &mut rx);
        assert_eq!(rx, vec![0, 2, 3]);
        assert_eq!(at, 2.0 + airtime(50));
    }

    #[test]
    fn empirical_delivery_rate_matches_link_quality() {
        let mut loss = LossMatrix::from_rows(vec![vec![0.0; 3]; 3]).unwrap();
        loss.set(0, 1, 0.2);
        loss.set(0, 2, 0.65);
        let ch = Channel::new(loss);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rx = Vec::new();
        let trials = 100_000;
        let mut hits = [0usize; 3];
        for _ in 0..trials {
            ch.broadcast(0, 50, 0.0, &mut rng, &mut rx);
            rx.iter().for_each(|&j| hits[j] += 1);
        }
        for (j, q) in [(1, 0.2), (2, 0.65)] {
            let rate = hits[j] as f64 / trials as f64;
            assert!((rate - (1.0 - q)).abs() / (1.0 - q) < 0.01, "link {j}: {rate}");
        }
    }

    #[test]
    fn diagonal_is_zero() {
        let m = LossMatrix::from_rows(vec![vec![0.5; 2]; 2]).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(0, 1), 0.5);
        assert!(LossMatrix::from_rows(vec![vec![0.5; 2]; 3]).is_err());
        assert!(LossMatrix::from_rows(vec![vec![1.5; 2]; 2]).is_err());
    }
}
