//! Markov-chain model of single-update dissemination.
//!
//! A state is the set of nodes holding the update, stored as a bitmask with
//! bit `i` set iff node `i` holds it. Each step one of the `K` nodes is
//! picked uniformly to transmit; a holder reaches each non-holder `j`
//! independently with probability `1 - q[i][j]`. Holders never forget, so
//! every transition goes from a set to a superset. Solving for the expected
//! number of steps to the all-ones state therefore only needs a sweep from
//! large sets to small ones, which keeps `K = 15` well within reach.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::sim::channel::LossMatrix;

/// Largest supported node count.
pub const MAX_NODES: usize = 24;

const RESIDUAL_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtmcError {
    /// The all-ones state cannot be reached from some reachable state.
    #[error("state {state:#b} cannot make progress; the link graph is disconnected")]
    Unreachable { state: u32 },
    #[error("hitting-time residual {residual:e} exceeds tolerance")]
    NumericalFailure { residual: f64 },
    #[error("{0} nodes; supported range is 1..={MAX_NODES}")]
    TooManyNodes(usize),
    #[error("invalid state {state:#b} for {k} nodes")]
    InvalidState { state: u32, k: usize },
}

/// Set of nodes holding the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainState(pub u32);

impl ChainState {
    pub fn from_bits(bits: &[bool]) -> Self {
        Self(
            bits.iter()
                .enumerate()
                .filter(|(_, b)| **b)
                .fold(0, |acc, (i, _)| acc | 1 << i),
        )
    }

    pub fn start() -> Self {
        Self(1)
    }

    pub fn full(k: usize) -> Self {
        Self(((1u64 << k) - 1) as u32)
    }

    pub fn holds(self, node: usize) -> bool {
        self.0 >> node & 1 == 1
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    /// True iff every holder in `self` also holds in `other`.
    pub fn le(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }
}

fn check_k(k: usize) -> Result<(), DtmcError> {
    if k == 0 || k > MAX_NODES {
        return Err(DtmcError::TooManyNodes(k));
    }
    Ok(())
}

/// One-step probability of moving from `s` to `t`.
pub fn transition_probability(s: ChainState, t: ChainState, q: &LossMatrix) -> f64 {
    let k = q.len();
    if !s.le(t) {
        return 0.0;
    }
    let kf = k as f64;
    let holders: Vec<usize> = (0..k).filter(|&i| s.holds(i)).collect();
    let reached: Vec<usize> = (0..k).filter(|&j| t.holds(j) && !s.holds(j)).collect();
    let missed: Vec<usize> = (0..k).filter(|&j| !t.holds(j)).collect();
    let via = |i: usize| -> f64 {
        let hit: f64 = reached.iter().map(|&j| 1.0 - q.get(i, j)).product();
        let miss: f64 = missed.iter().map(|&j| q.get(i, j)).product();
        hit * miss / kf
    };
    let moved: f64 = holders.iter().map(|&i| via(i)).sum();
    if s == t {
        (kf - holders.len() as f64) / kf + moved
    } else {
        moved
    }
}

/// Transition probabilities restricted to the states reachable from a start
/// state. Rows hold only non-zero entries.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    k: usize,
    rows: BTreeMap<ChainState, BTreeMap<ChainState, f64>>,
}

impl TransitionMatrix {
    pub fn node_count(&self) -> usize {
        self.k
    }

    pub fn state_count(&self) -> usize {
        self.rows.len()
    }

    pub fn states(&self) -> impl Iterator<Item = ChainState> + '_ {
        self.rows.keys().copied()
    }

    pub fn row(&self, s: ChainState) -> Option<&BTreeMap<ChainState, f64>> {
        self.rows.get(&s)
    }

    pub fn get(&self, s: ChainState, t: ChainState) -> f64 {
        self.rows
            .get(&s)
            .and_then(|r| r.get(&t))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Outgoing distribution of `s`, computed per transmitter over the subsets
/// of the non-holders it can reach.
fn row_of(s: ChainState, q: &LossMatrix) -> BTreeMap<ChainState, f64> {
    let k = q.len();
    let kf = k as f64;
    let mut row = BTreeMap::new();
    let mut stay = (k - s.count() as usize) as f64 / kf;
    for i in (0..k).filter(|&i| s.holds(i)) {
        let audible: Vec<(usize, f64)> = (0..k)
            .filter(|&j| !s.holds(j) && q.get(i, j) < 1.0)
            .map(|j| (j, q.get(i, j)))
            .collect();
        for subset in 0u64..1 << audible.len() {
            let mut p = 1.0 / kf;
            let mut t = s.0;
            for (b, &(j, qij)) in audible.iter().enumerate() {
                if subset >> b & 1 == 1 {
                    p *= 1.0 - qij;
                    t |= 1 << j;
                } else {
                    p *= qij;
                }
            }
            if p == 0.0 {
                continue;
            }
            if t == s.0 {
                stay += p;
            } else {
                *row.entry(ChainState(t)).or_insert(0.0) += p;
            }
        }
    }
    if stay > 0.0 {
        row.insert(s, stay);
    }
    row
}

/// Builds the chain over the states reachable from `start`.
pub fn build(q: &LossMatrix, start: ChainState) -> Result<TransitionMatrix, DtmcError> {
    let k = q.len();
    check_k(k)?;
    if start.0 == 0 || start.0 >> k != 0 {
        return Err(DtmcError::InvalidState { state: start.0, k });
    }
    let mut rows = BTreeMap::new();
    let mut frontier = vec![start];
    let mut seen = BTreeSet::from([start]);
    while let Some(s) = frontier.pop() {
        let row = row_of(s, q);
        for &t in row.keys() {
            if seen.insert(t) {
                frontier.push(t);
            }
        }
        rows.insert(s, row);
    }
    Ok(TransitionMatrix { k, rows })
}

/// Expected number of steps from `start` until every node holds the update.
pub fn expected_hitting_steps(q: &LossMatrix, start: ChainState) -> Result<f64, DtmcError> {
    let chain = build(q, start)?;
    let target = ChainState::full(chain.k);
    let mut steps: BTreeMap<ChainState, f64> = BTreeMap::new();
    // Supersets have larger bitmasks, so descending order visits every
    // successor before its predecessors.
    for (&s, row) in chain.rows.iter().rev() {
        if s == target {
            steps.insert(s, 0.0);
            continue;
        }
        let mut escape = 0.0;
        let mut acc = 1.0;
        for (&t, &p) in row {
            if t != s {
                escape += p;
                acc += p * steps[&t];
            }
        }
        if escape == 0.0 {
            return Err(DtmcError::Unreachable { state: s.0 });
        }
        steps.insert(s, acc / escape);
    }
    let residual = chain
        .rows
        .iter()
        .filter(|(s, _)| **s != target)
        .map(|(s, row)| {
            let rhs: f64 = 1.0 + row.iter().map(|(t, p)| p * steps[t]).sum::<f64>();
            (steps[s] - rhs).abs()
        })
        .fold(0.0, f64::max);
    if !(residual < RESIDUAL_TOLERANCE) {
        return Err(DtmcError::NumericalFailure { residual });
    }
    Ok(steps[&start])
}

/// Converts steps to seconds: with exponential beacon timing the `K` nodes
/// together transmit as a Poisson process of rate `K * beta`.
pub fn expected_delay_seconds(steps: f64, k: usize, beta_hz: f64) -> f64 {
    if steps == 0.0 {
        return 0.0;
    }
    steps / (k as f64 * beta_hz)
}
