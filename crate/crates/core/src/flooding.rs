//! Per-update flooding, the comparator protocol.
//!
//! Every update is wrapped in its own packet and pushed through a
//! broadcast queue. A worker pops the head after an exponential backoff and
//! re-inserts it at the front until it has gone out `repCnt` times.
//! Receivers drop their own packets and anything not newer than the highest
//! sequence number already seen from the same source.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::wire::NodeId;

/// Version, source, sequence number, TTL and payload length.
pub const FLOOD_HEADER_LEN: usize = 1 + 6 + 4 + 1 + 2;
pub const FLOOD_VERSION: u8 = 1;
pub const DEFAULT_MEAN_BACKOFF_S: f64 = 0.010;
pub const DEFAULT_TTL: u8 = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FloodError {
    #[error("malformed flood packet: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodPacket {
    pub source: NodeId,
    pub seqno: u32,
    /// Carried but never acted on.
    pub ttl: u8,
    pub payload: Vec<u8>,
}

impl FloodPacket {
    pub fn encoded_len(&self) -> usize {
        FLOOD_HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(FLOOD_VERSION);
        out.extend_from_slice(&self.source.get().to_le_bytes()[..6]);
        out.extend_from_slice(&self.seqno.to_le_bytes());
        out.push(self.ttl);
        let len = u16::try_from(self.payload.len()).expect("flood payload under 64 KiB");
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FloodError> {
        if bytes.len() < FLOOD_HEADER_LEN {
            return Err(FloodError::Malformed(format!("{} byte frame", bytes.len())));
        }
        if bytes[0] != FLOOD_VERSION {
            return Err(FloodError::Malformed(format!("version {}", bytes[0])));
        }
        let mut raw = [0u8; 8];
        raw[..6].copy_from_slice(&bytes[1..7]);
        let source = NodeId::new(u64::from_le_bytes(raw)).expect("48-bit source");
        let seqno = u32::from_le_bytes(bytes[7..11].try_into().unwrap());
        let ttl = bytes[11];
        let len = u16::from_le_bytes([bytes[12], bytes[13]]) as usize;
        let payload = bytes[FLOOD_HEADER_LEN..].to_vec();
        if payload.len() != len {
            return Err(FloodError::Malformed(format!(
                "length field {len}, {} payload bytes",
                payload.len()
            )));
        }
        Ok(Self {
            source,
            seqno,
            ttl,
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloodConfig {
    pub rep_cnt: u8,
    pub mean_backoff_s: f64,
}

impl Default for FloodConfig {
    fn default() -> Self {
        Self {
            rep_cnt: 1,
            mean_backoff_s: DEFAULT_MEAN_BACKOFF_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Queued {
    packet: FloodPacket,
    remaining: u8,
}

/// Result of handing a received packet to the flooding entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FloodReceive {
    /// Own packet, duplicate, or older than one already seen.
    Dropped,
    /// Fresh: passed to the application and queued for forwarding.
    Delivered,
}

#[derive(Debug, Clone)]
pub struct Flooding {
    node: NodeId,
    config: FloodConfig,
    backoff: Exp<f64>,
    queue: VecDeque<Queued>,
    highest_seen: BTreeMap<NodeId, u32>,
    next_seqno: u32,
    worker_busy: bool,
    transmissions: u64,
}

impl Flooding {
    pub fn new(node: NodeId, config: FloodConfig) -> Self {
        assert!(config.rep_cnt >= 1, "repCnt must be at least 1");
        let backoff = Exp::new(1.0 / config.mean_backoff_s).expect("positive mean backoff");
        Self {
            node,
            config,
            backoff,
            queue: VecDeque::new(),
            highest_seen: BTreeMap::new(),
            next_seqno: 0,
            worker_busy: false,
            transmissions: 0,
        }
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn transmissions(&self) -> u64 {
        self.transmissions
    }

    /// Remaining repetitions of the packet at the head of the queue.
    pub fn head_remaining(&self) -> Option<u8> {
        self.queue.front().map(|q| q.remaining)
    }

    pub fn head(&self) -> Option<&FloodPacket> {
        self.queue.front().map(|q| &q.packet)
    }

    /// Starts a flooding operation for a locally generated update.
    pub fn submit(&mut self, payload: Vec<u8>) -> FloodPacket {
        self.next_seqno += 1;
        let packet = FloodPacket {
            source: self.node,
            seqno: self.next_seqno,
            ttl: crate::flooding::DEFAULT_TTL,
            payload,
        };
        self.enqueue(packet.clone());
        packet
    }

    fn enqueue(&mut self, packet: FloodPacket) {
        self.queue.push_back(Queued {
            packet,
            remaining: self.config.rep_cnt,
        });
    }

    fn draw_backoff<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.backoff.sample(rng)
    }

    /// Wakes an idle worker. Returns the time its backoff ends, if it was
    /// idle and has work.
    pub fn kick<R: Rng + ?Sized>(&mut self, rng: &mut R, now: f64) -> Option<f64> {
        if self.worker_busy || self.queue.is_empty() {
            return None;
        }
        self.worker_busy = true;
        Some(now + self.draw_backoff(rng))
    }

    /// Runs the worker at the end of a backoff: transmits the head packet
    /// and schedules the next backoff if work remains.
    pub fn worker_step<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        now: f64,
    ) -> (Option<FloodPacket>, Option<f64>) {
        let sent = match self.queue.front_mut() {
            Some(head) if head.remaining > 1 => {
                head.remaining -= 1;
                Some(head.packet.clone())
            }
            Some(_) => self.queue.pop_front().map(|q| q.packet),
            None => None,
        };
        if sent.is_some() {
            self.transmissions += 1;
        }
        let next = if self.queue.is_empty() {
            self.worker_busy = false;
            None
        } else {
            Some(now + self.draw_backoff(rng))
        };
        (sent, next)
    }

    pub fn receive(&mut self, packet: FloodPacket) -> FloodReceive {
        if packet.source == self.node {
            return FloodReceive::Dropped;
        }
        match self.highest_seen.get(&packet.source) {
            Some(&seen) if packet.seqno <= seen => FloodReceive::Dropped,
            _ => {
                self.highest_seen.insert(packet.source, packet.seqno);
                self.enqueue(packet);
                FloodReceive::Delivered
            }
        }
    }
}
