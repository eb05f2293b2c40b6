//! Beaconing Protocol: client registration, payload buffering, beacon
//! assembly and timing, and dispatch of received payloads.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::wire::{
    Beacon, ClientPayload, NodeId, BEACON_HEADER_LEN, BEACON_PAYLOAD_HEADER_LEN,
};

/// Client protocol id of VarDis.
pub const VARDIS_CLIENT_ID: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BpError {
    #[error("client protocol {0} is already registered")]
    AlreadyRegistered(u8),
    #[error("client protocol {0} is not registered")]
    NotRegistered(u8),
    #[error("payload of {size} bytes exceeds the {limit}-byte budget")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("empty payload")]
    EmptyPayload,
    #[error("maximum beacon size {0} cannot hold a beacon header")]
    BeaconTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferMode {
    /// FIFO of unbounded size; each payload goes out exactly once.
    Queueing,
    /// Single overwritable slot, cleared once its content is sent.
    BufferedOnce,
    /// Single overwritable slot that is never cleared by transmission.
    BufferedRepeated,
}

#[derive(Debug, Clone)]
enum Buffer {
    Queue(VecDeque<Vec<u8>>),
    Slot(Option<Vec<u8>>),
}

#[derive(Debug, Clone)]
struct Registration {
    mode: BufferMode,
    buffer: Buffer,
}

impl Registration {
    fn new(mode: BufferMode) -> Self {
        let buffer = match mode {
            BufferMode::Queueing => Buffer::Queue(VecDeque::new()),
            BufferMode::BufferedOnce | BufferMode::BufferedRepeated => Buffer::Slot(None),
        };
        Self { mode, buffer }
    }

    fn peek(&self) -> Option<&[u8]> {
        match &self.buffer {
            Buffer::Queue(q) => q.front().map(Vec::as_slice),
            Buffer::Slot(s) => s.as_deref(),
        }
    }

    /// Takes the next payload for a beacon and applies the mode's
    /// post-insertion rule.
    fn take(&mut self) -> Option<Vec<u8>> {
        match (&mut self.buffer, self.mode) {
            (Buffer::Queue(q), _) => q.pop_front(),
            (Buffer::Slot(s), BufferMode::BufferedOnce) => s.take(),
            (Buffer::Slot(s), _) => s.clone(),
        }
    }
}

/// Handle returned by [`BeaconingProtocol::register_client`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClientHandle(u8);

impl ClientHandle {
    pub fn id(self) -> u8 {
        self.0
    }
}

/// A received payload handed to a client protocol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub client: u8,
    pub sender: NodeId,
    pub bytes: Vec<u8>,
}

/// One node's BP entity.
#[derive(Debug, Clone)]
pub struct BeaconingProtocol {
    node: NodeId,
    max_beacon_size: usize,
    next_seqno: u32,
    clients: BTreeMap<u8, Registration>,
}

impl BeaconingProtocol {
    pub fn new(node: NodeId, max_beacon_size: usize) -> Result<Self, BpError> {
        if max_beacon_size < BEACON_HEADER_LEN + BEACON_PAYLOAD_HEADER_LEN {
            return Err(BpError::BeaconTooSmall(max_beacon_size));
        }
        Ok(Self {
            node,
            max_beacon_size,
            next_seqno: 0,
            clients: BTreeMap::new(),
        })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn max_beacon_size(&self) -> usize {
        self.max_beacon_size
    }

    /// Largest payload one client can place in a beacon of the configured
    /// size. Bounded by the one-byte length field as well.
    pub fn max_payload_len(&self) -> usize {
        (self.max_beacon_size - BEACON_HEADER_LEN - BEACON_PAYLOAD_HEADER_LEN).min(u8::MAX as usize)
    }

    pub fn register_client(&mut self, id: u8, mode: BufferMode) -> Result<ClientHandle, BpError> {
        if self.clients.contains_key(&id) {
            return Err(BpError::AlreadyRegistered(id));
        }
        self.clients.insert(id, Registration::new(mode));
        Ok(ClientHandle(id))
    }

    pub fn deregister_client(&mut self, id: u8) -> Result<(), BpError> {
        self.clients
            .remove(&id)
            .map(|_| ())
            .ok_or(BpError::NotRegistered(id))
    }

    pub fn client_mode(&self, id: u8) -> Option<BufferMode> {
        self.clients.get(&id).map(|r| r.mode)
    }

    pub fn registered_clients(&self) -> impl Iterator<Item = (u8, BufferMode)> + '_ {
        self.clients.iter().map(|(id, r)| (*id, r.mode))
    }

    pub fn submit_payload(&mut self, handle: ClientHandle, bytes: Vec<u8>) -> Result<(), BpError> {
        if bytes.is_empty() {
            return Err(BpError::EmptyPayload);
        }
        let limit = self.max_payload_len();
        if bytes.len() > limit {
            return Err(BpError::PayloadTooLarge {
                size: bytes.len(),
                limit,
            });
        }
        let reg = self
            .clients
            .get_mut(&handle.0)
            .ok_or(BpError::NotRegistered(handle.0))?;
        match &mut reg.buffer {
            Buffer::Queue(q) => q.push_back(bytes),
            Buffer::Slot(s) => *s = Some(bytes),
        }
        Ok(())
    }

    /// Number of payloads waiting for `id`: the queue length, or 0/1 for a slot.
    pub fn pending(&self, id: u8) -> usize {
        match self.clients.get(&id).map(|r| &r.buffer) {
            Some(Buffer::Queue(q)) => q.len(),
            Some(Buffer::Slot(s)) => usize::from(s.is_some()),
            None => 0,
        }
    }

    /// Builds the next beacon under a `max_beacon_size` budget.
    ///
    /// Clients are visited in ascending id; each contributes at most one
    /// payload, and payloads that do not fit the remaining budget are left
    /// in place. Returns `None` when no payload was taken, in which case no
    /// beacon is sent and the BP sequence number is not consumed.
    pub fn assemble_beacon(&mut self, max_beacon_size: usize) -> Option<Beacon> {
        let mut remaining = max_beacon_size.checked_sub(BEACON_HEADER_LEN)?;
        let mut payloads = Vec::new();
        for (id, reg) in self.clients.iter_mut() {
            let Some(len) = reg.peek().map(<[u8]>::len) else {
                continue;
            };
            let needed = len + BEACON_PAYLOAD_HEADER_LEN;
            if needed > remaining || len > u8::MAX as usize {
                continue;
            }
            remaining -= needed;
            let bytes = reg.take().expect("peeked payload present");
            payloads.push(ClientPayload { client: *id, bytes });
        }
        if payloads.is_empty() {
            return None;
        }
        let bp_seqno = self.next_seqno;
        self.next_seqno = self.next_seqno.wrapping_add(1);
        Some(Beacon {
            sender: self.node,
            bp_seqno,
            payloads,
        })
    }

    /// Splits a received beacon into per-client deliveries. Payloads for
    /// unregistered clients are dropped.
    pub fn on_receive_beacon(&self, beacon: Beacon) -> Vec<Delivery> {
        let sender = beacon.sender;
        beacon
            .payloads
            .into_iter()
            .filter(|p| self.clients.contains_key(&p.client))
            .map(|p| Delivery {
                client: p.client,
                sender,
                bytes: p.bytes,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BeaconDistribution {
    /// Uniform over `[(1 - jitter) / rate, (1 + jitter) / rate]`.
    PeriodicJitter { jitter: f64 },
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconTiming {
    pub rate_hz: f64,
    pub distribution: BeaconDistribution,
}

impl BeaconTiming {
    pub fn new(rate_hz: f64, distribution: BeaconDistribution) -> Self {
        assert!(rate_hz > 0.0 && rate_hz.is_finite(), "beacon rate must be positive");
        if let BeaconDistribution::PeriodicJitter { jitter } = distribution {
            assert!((0.0..1.0).contains(&jitter), "jitter must lie in [0, 1)");
        }
        Self {
            rate_hz,
            distribution,
        }
    }

    pub fn periodic(rate_hz: f64, jitter: f64) -> Self {
        Self::new(rate_hz, BeaconDistribution::PeriodicJitter { jitter })
    }

    pub fn exponential(rate_hz: f64) -> Self {
        Self::new(rate_hz, BeaconDistribution::Exponential)
    }

    pub fn mean_interval(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// One inter-beacon time.
    pub fn draw_interval<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let period = self.mean_interval();
        match self.distribution {
            BeaconDistribution::PeriodicJitter { jitter: 0.0 } => period,
            BeaconDistribution::PeriodicJitter { jitter } => {
                rng.random_range((1.0 - jitter) * period..=(1.0 + jitter) * period)
            }
            BeaconDistribution::Exponential => {
                Exp::new(self.rate_hz).expect("positive rate").sample(rng)
            }
        }
    }

    pub fn next_beacon_time<R: Rng + ?Sized>(&self, rng: &mut R, now: f64) -> f64 {
        now + self.draw_interval(rng)
    }

    /// Time of a node's first beacon. Periodic schedules start at a uniform
    /// phase so that nodes are not synchronised at time zero.
    pub fn first_beacon_time<R: Rng + ?Sized>(&self, rng: &mut R, start: f64) -> f64 {
        match self.distribution {
            BeaconDistribution::PeriodicJitter { .. } => {
                start + rng.random_range(0.0..self.mean_interval())
            }
            BeaconDistribution::Exponential => self.next_beacon_time(rng, start),
        }
    }
}
