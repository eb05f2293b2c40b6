//! Deterministic discrete-event simulation of VarDis-over-BP or flooding on
//! a lossy broadcast channel.
//!
//! The kernel is single-threaded. A run is a pure function of its
//! [`SimConfig`], master seed and replication index.

pub mod channel;
pub mod deployment;
pub mod events;
pub mod rng;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{BeaconTiming, BeaconingProtocol, BufferMode, ClientHandle, VARDIS_CLIENT_ID};
use crate::flooding::{FloodConfig, FloodPacket, FloodReceive, Flooding};
use crate::vardis::{StateChange, VarDis, VarDisConfig};
use crate::wire::{
    decode_beacon, decode_payload, decode_update_record, encode_beacon, encode_payload,
    encode_update_record, NodeId, SeqNo, VarId, VarUpdateRecord, VarValue, VariableSpecification,
};

use self::channel::{Channel, LossMatrix};
use self::events::EventQueue;
use self::rng::{stream, SimRng};

/// Application variable: 8 B generation time (f64) and 4 B app sequence number.
pub const VARIABLE_LEN: usize = 12;
/// Samples generated before this time are discarded by default.
pub const DEFAULT_WARMUP_S: f64 = 30.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("writing samples: {0}")]
    Io(#[from] io::Error),
    #[error("writing samples: {0}")]
    Csv(#[from] csv::Error),
}

pub fn encode_app_value(gen_time: f64, app_seqno: u32) -> VarValue {
    let mut bytes = Vec::with_capacity(VARIABLE_LEN);
    bytes.extend_from_slice(&gen_time.to_le_bytes());
    bytes.extend_from_slice(&app_seqno.to_le_bytes());
    VarValue::new(bytes).expect("12-byte value")
}

pub fn decode_app_value(bytes: &[u8]) -> Option<(f64, u32)> {
    if bytes.len() != VARIABLE_LEN {
        return None;
    }
    let t = f64::from_le_bytes(bytes[..8].try_into().ok()?);
    let s = u32::from_le_bytes(bytes[8..].try_into().ok()?);
    Some((t, s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateDistribution {
    Periodic,
    Exponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficModel {
    pub producers: Vec<usize>,
    /// Mean inter-update time in seconds (the lambda of the experiments).
    pub period_s: f64,
    pub distribution: UpdateDistribution,
}

impl TrafficModel {
    fn draw_gap(&self, rng: &mut SimRng) -> f64 {
        match self.distribution {
            UpdateDistribution::Periodic => self.period_s,
            UpdateDistribution::Exponential => {
                Exp::new(1.0 / self.period_s).expect("positive period").sample(rng)
            }
        }
    }

    fn first_update(&self, rng: &mut SimRng) -> f64 {
        match self.distribution {
            UpdateDistribution::Periodic => rng.random_range(0.0..self.period_s),
            UpdateDistribution::Exponential => self.draw_gap(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolConfig {
    VarDis {
        rep_cnt: u8,
        max_beacon_size: usize,
        beacon: BeaconTiming,
        vardis: VarDisConfig,
    },
    Flooding {
        rep_cnt: u8,
        mean_backoff_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub loss: LossMatrix,
    pub protocol: ProtocolConfig,
    pub traffic: TrafficModel,
    /// `(producer, consumer)` pairs whose receptions become samples.
    pub tracked: Vec<(usize, usize)>,
    pub duration_s: f64,
    pub warmup_s: f64,
    /// Instants at which the mean flooding queue length is recorded.
    pub queue_sample_times: Vec<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.loss.len();
        let bad = |m: String| Err(SimError::ConfigInvalid(m));
        if n < 2 {
            return bad(format!("{n} nodes; need at least 2"));
        }
        if n > usize::from(u16::MAX) {
            return bad(format!("{n} nodes exceed the 16-bit variable id space"));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {}", self.duration_s));
        }
        if !(self.warmup_s >= 0.0) {
            return bad(format!("warm-up {}", self.warmup_s));
        }
        if !(self.traffic.period_s > 0.0 && self.traffic.period_s.is_finite()) {
            return bad(format!("update period {}", self.traffic.period_s));
        }
        if let Some(p) = self.traffic.producers.iter().find(|&&p| p >= n) {
            return bad(format!("producer {p} outside 0..{n}"));
        }
        if let Some(pair) = self.tracked.iter().find(|(p, c)| *p >= n || *c >= n) {
            return bad(format!("tracked pair {pair:?} outside 0..{n}"));
        }
        match &self.protocol {
            ProtocolConfig::VarDis {
                rep_cnt,
                max_beacon_size,
                ..
            } => {
                if !(1..=crate::wire::MAX_REP_CNT).contains(rep_cnt) {
                    return bad(format!("repCnt {rep_cnt}"));
                }
                BeaconingProtocol::new(NodeId::new(0).unwrap(), *max_beacon_size)
                    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
            }
            ProtocolConfig::Flooding {
                rep_cnt,
                mean_backoff_s,
            } => {
                if *rep_cnt == 0 {
                    return bad("repCnt 0".into());
                }
                if !(*mean_backoff_s > 0.0) {
                    return bad(format!("mean backoff {mean_backoff_s}"));
                }
            }
        }
        Ok(())
    }
}

/// One reception of a tracked producer's update at a tracked consumer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub consumer: u64,
    pub producer: u64,
    pub var_id: u16,
    pub app_seqno: u32,
    #[serde(rename = "gen_time_s")]
    pub gen_time: f64,
    #[serde(rename = "recv_time_s")]
    pub recv_time: f64,
}

impl Sample {
    pub fn delay(&self) -> f64 {
        self.recv_time - self.gen_time
    }
}

/// Writes samples as CSV with the
/// `consumer,producer,var_id,app_seqno,gen_time_s,recv_time_s` header.
pub fn write_samples_csv<W: io::Write>(samples: &[Sample], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    if samples.is_empty() {
        w.write_record(["consumer", "producer", "var_id", "app_seqno", "gen_time_s", "recv_time_s"])?;
    }
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: io::Read>(input: R) -> Result<Vec<Sample>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(SimError::from)).collect()
}

/// Violations of protocol invariants observed during a run. All zero in a
/// correct run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InvariantReport {
    /// A node's stored seqno for some variable went backwards.
    pub seqno_regressions: u64,
    /// An application-visible update was delivered twice or out of order.
    pub duplicate_deliveries: u64,
    /// A node put an update record into more payloads than its arming
    /// events allow.
    pub repetition_violations: u64,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueSample {
    pub time: f64,
    pub mean_len: f64,
    pub max_len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    /// Samples whose generation time lies in `[warmup, duration)`.
    pub samples: Vec<Sample>,
    /// Updates issued per producer in `[warmup, duration)`.
    pub issued: BTreeMap<u64, u64>,
    pub queue_samples: Vec<QueueSample>,
    pub invariants: InvariantReport,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub events: u64,
}

#[derive(Debug)]
enum Frame {
    Beacon(Vec<u8>),
    Flood(Vec<u8>),
}

#[derive(Debug)]
enum Event {
    Beacon(usize),
    Update(usize),
    Deliver { to: usize, frame: Rc<Frame> },
    FloodWake(usize),
    QueueSample,
}

enum Stack {
    VarDis {
        bp: BeaconingProtocol,
        handle: ClientHandle,
        vardis: VarDis,
    },
    Flooding(Flooding),
}

struct Node {
    id: NodeId,
    stack: Stack,
    beacon_rng: SimRng,
    traffic_rng: SimRng,
    channel_rng: SimRng,
    flood_rng: SimRng,
    app_seqno: u32,
    /// Last application seqno delivered, per producer.
    delivered: HashMap<u64, u32>,
    /// Last VarDis seqno stored, per variable.
    stored: HashMap<VarId, SeqNo>,
}

/// A simulation in progress. Most callers want [`run`].
pub struct Simulation {
    config: SimConfig,
    channel: Channel,
    nodes: Vec<Node>,
    queue: EventQueue<Event>,
    tracked: BTreeSet<(usize, usize)>,
    queue_times: Vec<f64>,
    next_queue_sample: usize,
    receivers: Vec<usize>,
    out: RunOutput,
}

fn var_of(node: usize) -> VarId {
    VarId(node as u16)
}

impl Simulation {
    pub fn new(config: SimConfig, seed: u64, replication: u64) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.loss.len();
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let id = NodeId::new(i as u64).expect("small node index");
            let stack = match &config.protocol {
                ProtocolConfig::VarDis {
                    max_beacon_size,
                    vardis,
                    ..
                } => {
                    let mut bp = BeaconingProtocol::new(id, *max_beacon_size)
                        .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
                    let handle = bp
                        .register_client(VARDIS_CLIENT_ID, BufferMode::BufferedOnce)
                        .expect("fresh BP entity");
                    Stack::VarDis {
                        bp,
                        handle,
                        vardis: VarDis::new(id, vardis.clone()),
                    }
                }
                ProtocolConfig::Flooding {
                    rep_cnt,
                    mean_backoff_s,
                } => Stack::Flooding(Flooding::new(
                    id,
                    FloodConfig {
                        rep_cnt: *rep_cnt,
                        mean_backoff_s: *mean_backoff_s,
                    },
                )),
            };
            let s = |name| stream(seed, replication, i as u64, name);
            nodes.push(Node {
                id,
                stack,
                beacon_rng: s("beacon"),
                traffic_rng: s("traffic"),
                channel_rng: s("channel"),
                flood_rng: s("flood"),
                app_seqno: 0,
                delivered: HashMap::new(),
                stored: HashMap::new(),
            });
        }
        let mut queue_times: Vec<f64> = config
            .queue_sample_times
            .iter()
            .copied()
            .filter(|t| *t <= config.duration_s)
            .collect();
        queue_times.sort_by(f64::total_cmp);
        let mut sim = Self {
            channel: Channel::new(config.loss.clone()),
            tracked: config.tracked.iter().copied().collect(),
            nodes,
            queue: EventQueue::new(),
            queue_times,
            next_queue_sample: 0,
            receivers: Vec::new(),
            out: RunOutput::default(),
            config,
        };
        sim.bootstrap()?;
        Ok(sim)
    }

    fn bootstrap(&mut self) -> Result<(), SimError> {
        let producers = self.config.traffic.producers.clone();
        if let ProtocolConfig::VarDis {
            rep_cnt, beacon, ..
        } = self.config.protocol.clone()
        {
            for &p in &producers {
                let id = self.nodes[p].id;
                let Stack::VarDis { vardis, .. } = &mut self.nodes[p].stack else {
                    unreachable!()
                };
                let spec = VariableSpecification::new(var_of(p), id, rep_cnt, "")
                    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
                vardis
                    .create_variable(spec, encode_app_value(0.0, 0), 0.0)
                    .map_err(|e| SimError::ConfigInvalid(e.to_string()))?;
                self.nodes[p].stored.insert(var_of(p), SeqNo(0));
            }
            for i in 0..self.nodes.len() {
                let t = beacon.first_beacon_time(&mut self.nodes[i].beacon_rng, 0.0);
                self.queue.schedule(t, Event::Beacon(i));
            }
        }
        for &p in &producers {
            let t = self.config.traffic.first_update(&mut self.nodes[p].traffic_rng);
            self.queue.schedule(t, Event::Update(p));
        }
        if let Some(&t) = self.queue_times.first() {
            self.queue.schedule(t, Event::QueueSample);
        }
        Ok(())
    }

    pub fn now(&self) -> f64 {
        self.queue.now()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn vardis(&self, node: usize) -> Option<&VarDis> {
        match &self.nodes[node].stack {
            Stack::VarDis { vardis, .. } => Some(vardis),
            Stack::Flooding(_) => None,
        }
    }

    pub fn flooding(&self, node: usize) -> Option<&Flooding> {
        match &self.nodes[node].stack {
            Stack::Flooding(f) => Some(f),
            Stack::VarDis { .. } => None,
        }
    }

    /// Processes every event scheduled at or before `until` (capped at the
    /// configured duration).
    pub fn run_until(&mut self, until: f64) {
        let until = until.min(self.config.duration_s);
        while self.queue.peek_time().is_some_and(|t| t <= until) {
            let (now, event) = self.queue.pop().expect("peeked");
            self.out.events += 1;
            match event {
                Event::Beacon(i) => self.on_beacon(i, now),
                Event::Update(i) => self.on_update(i, now),
                Event::Deliver { to, frame } => self.on_deliver(to, &frame, now),
                Event::FloodWake(i) => self.on_flood_wake(i, now),
                Event::QueueSample => self.on_queue_sample(now),
            }
        }
    }

    pub fn finish(mut self) -> RunOutput {
        self.run_until(self.config.duration_s);
        if let ProtocolConfig::VarDis { rep_cnt, vardis, .. } = &self.config.protocol {
            if !vardis.always_repeat {
                for node in &self.nodes {
                    let Stack::VarDis { vardis, .. } = &node.stack else {
                        continue;
                    };
                    for var in node.stored.keys() {
                        let s = vardis.update_stats(*var);
                        if s.inclusions > u64::from(*rep_cnt) * s.arms {
                            self.out.invariants.repetition_violations += 1;
                        }
                    }
                }
            }
        }
        self.out
    }

    fn in_window(&self, gen_time: f64) -> bool {
        gen_time >= self.config.warmup_s && gen_time < self.config.duration_s
    }

    fn broadcast(&mut self, from: usize, frame: Frame, now: f64) {
        let len = match &frame {
            Frame::Beacon(b) | Frame::Flood(b) => b.len(),
        };
        let mut receivers = std::mem::take(&mut self.receivers);
        let at = self
            .channel
            .broadcast(from, len, now, &mut self.nodes[from].channel_rng, &mut receivers);
        self.out.frames_sent += 1;
        let frame = Rc::new(frame);
        for &to in &receivers {
            self.queue.schedule(
                at,
                Event::Deliver {
                    to,
                    frame: Rc::clone(&frame),
                },
            );
        }
        self.receivers = receivers;
    }

    fn on_beacon(&mut self, i: usize, now: f64) {
        let ProtocolConfig::VarDis {
            beacon,
            max_beacon_size,
            ..
        } = &self.config.protocol
        else {
            unreachable!("beacon event without VarDis")
        };
        let (timing, max_beacon_size): (BeaconTiming, usize) = (*beacon, *max_beacon_size);
        let node = &mut self.nodes[i];
        let next = timing.next_beacon_time(&mut node.beacon_rng, now);
        let Stack::VarDis { bp, handle, vardis } = &mut node.stack else {
            unreachable!()
        };
        let limit = bp.max_payload_len();
        let mut frame = None;
        if let Some(payload) = vardis.make_payload(limit, now) {
            let bytes = encode_payload(&payload, limit).expect("payload built within budget");
            bp.submit_payload(*handle, bytes).expect("payload within BP budget");
        }
        if let Some(b) = bp.assemble_beacon(max_beacon_size) {
            frame = Some(encode_beacon(&b, max_beacon_size).expect("beacon within budget"));
        }
        self.queue.schedule(next, Event::Beacon(i));
        if let Some(bytes) = frame {
            self.broadcast(i, Frame::Beacon(bytes), now);
        }
    }

    fn on_update(&mut self, i: usize, now: f64) {
        let in_window = self.in_window(now);
        let node = &mut self.nodes[i];
        node.app_seqno += 1;
        let app_seqno = node.app_seqno;
        let value = encode_app_value(now, app_seqno);
        let next = now + self.config.traffic.draw_gap(&mut node.traffic_rng);
        let mut flood_frame = None;
        match &mut node.stack {
            Stack::VarDis { vardis, .. } => {
                let seqno = vardis
                    .update_variable(var_of(i), value, now)
                    .expect("producer owns its variable");
                node.stored.insert(var_of(i), seqno);
            }
            Stack::Flooding(f) => {
                let record = VarUpdateRecord {
                    var_id: var_of(i),
                    seqno: SeqNo(u64::from(app_seqno)),
                    value,
                };
                f.submit(encode_update_record(&record).expect("small record"));
                if let Some(t) = f.kick(&mut node.flood_rng, now) {
                    flood_frame = Some(t);
                }
            }
        }
        if in_window {
            *self.out.issued.entry(i as u64).or_default() += 1;
        }
        self.queue.schedule(next, Event::Update(i));
        if let Some(t) = flood_frame {
            self.queue.schedule(t, Event::FloodWake(i));
        }
    }

    fn on_flood_wake(&mut self, i: usize, now: f64) {
        let node = &mut self.nodes[i];
        let Stack::Flooding(f) = &mut node.stack else {
            unreachable!()
        };
        let (sent, next) = f.worker_step(&mut node.flood_rng, now);
        if let Some(t) = next {
            self.queue.schedule(t, Event::FloodWake(i));
        }
        if let Some(packet) = sent {
            self.broadcast(i, Frame::Flood(packet.encode()), now);
        }
    }

    fn on_queue_sample(&mut self, now: f64) {
        let lens: Vec<usize> = self
            .nodes
            .iter()
            .map(|n| match &n.stack {
                Stack::Flooding(f) => f.queue_len(),
                Stack::VarDis { .. } => 0,
            })
            .collect();
        self.out.queue_samples.push(QueueSample {
            time: now,
            mean_len: lens.iter().sum::<usize>() as f64 / lens.len() as f64,
            max_len: lens.iter().copied().max().unwrap_or(0),
        });
        self.next_queue_sample += 1;
        if let Some(&t) = self.queue_times.get(self.next_queue_sample) {
            self.queue.schedule(t.max(now), Event::QueueSample);
        }
    }

    fn on_deliver(&mut self, to: usize, frame: &Frame, now: f64) {
        self.out.frames_received += 1;
        match frame {
            Frame::Beacon(bytes) => self.on_beacon_frame(to, bytes, now),
            Frame::Flood(bytes) => self.on_flood_frame(to, bytes, now),
        }
    }

    fn on_beacon_frame(&mut self, to: usize, bytes: &[u8], now: f64) {
        let Ok(beacon) = decode_beacon(bytes) else {
            return;
        };
        let node = &mut self.nodes[to];
        let Stack::VarDis { bp, vardis, .. } = &mut node.stack else {
            return;
        };
        let mut adopted = Vec::new();
        for d in bp.on_receive_beacon(beacon) {
            if d.client != VARDIS_CLIENT_ID {
                continue;
            }
            let Ok(payload) = decode_payload(&d.bytes) else {
                continue;
            };
            for change in vardis.process_payload(&payload, now) {
                if let StateChange::Created { var_id, seqno } | StateChange::Updated { var_id, seqno } =
                    change
                {
                    let value = vardis
                        .read_variable(var_id)
                        .map(|(v, _, _)| v.as_bytes().to_vec())
                        .unwrap_or_default();
                    adopted.push((var_id, seqno, value));
                }
            }
        }
        for (var_id, seqno, value) in adopted {
            let node = &mut self.nodes[to];
            if let Some(prev) = node.stored.insert(var_id, seqno) {
                if seqno <= prev {
                    self.out.invariants.seqno_regressions += 1;
                }
            }
            if let Some((gen_time, app_seqno)) = decode_app_value(&value) {
                self.deliver_app(to, u64::from(var_id.0), app_seqno, gen_time, now);
            }
        }
    }

    fn on_flood_frame(&mut self, to: usize, bytes: &[u8], now: f64) {
        let Ok(packet) = FloodPacket::decode(bytes) else {
            return;
        };
        let source = packet.source.get();
        let record = decode_update_record(&packet.payload).ok();
        let node = &mut self.nodes[to];
        let Stack::Flooding(f) = &mut node.stack else {
            return;
        };
        if f.receive(packet) != FloodReceive::Delivered {
            return;
        }
        if let Some(t) = f.kick(&mut node.flood_rng, now) {
            self.queue.schedule(t, Event::FloodWake(to));
        }
        if let Some(record) = record {
            if let Some((gen_time, app_seqno)) = decode_app_value(record.value.as_bytes()) {
                self.deliver_app(to, source, app_seqno, gen_time, now);
            }
        }
    }

    fn deliver_app(&mut self, node: usize, producer: u64, app_seqno: u32, gen_time: f64, now: f64) {
        if let Some(prev) = self.nodes[node].delivered.insert(producer, app_seqno) {
            if app_seqno <= prev {
                self.out.invariants.duplicate_deliveries += 1;
            }
        }
        if self.tracked.contains(&(producer as usize, node)) && self.in_window(gen_time) {
            self.out.samples.push(Sample {
                consumer: node as u64,
                producer,
                var_id: producer as u16,
                app_seqno,
                gen_time,
                recv_time: now,
            });
        }
    }
}

/// Runs one replication to completion.
pub fn run(config: &SimConfig, seed: u64, replication: u64) -> Result<RunOutput, SimError> {
    Ok(Simulation::new(config.clone(), seed, replication)?.finish())
}
