//! Record types shared by BP and VarDis, and their byte-level encodings.
//!
//! All multi-byte integers are little-endian. Counts and lengths are a
//! single byte. Sequence numbers are 64-bit in memory but travel as 4
//! bytes; encoding fails rather than truncating if one does not fit.
//!
//! See `docs/wire-format.md` for worked examples.

use std::fmt;

use thiserror::Error;

/// Maximum length of a variable value in bytes.
pub const MAX_VALUE_LEN: usize = 64;
/// Maximum length of a variable description in bytes.
pub const MAX_DESCRIPTION_LEN: usize = 32;
/// Largest admissible repetition counter.
pub const MAX_REP_CNT: u8 = 15;

/// Size of a section header: one type byte and one record-count byte.
pub const SECTION_HEADER_LEN: usize = 2;
/// Wire size of a summary or update-request record.
pub const SUMMARY_RECORD_LEN: usize = 6;
/// Wire size of a delete or create-request record.
pub const VAR_ID_RECORD_LEN: usize = 2;

/// Fixed beacon header: version, sender and BP sequence number.
pub const BEACON_HEADER_LEN: usize = 1 + 6 + 4;
/// Per-payload header inside a beacon: client protocol id and length.
pub const BEACON_PAYLOAD_HEADER_LEN: usize = 2;
/// Current beacon format version.
pub const BEACON_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("encoded size {size} exceeds limit {limit}")]
    EncodedTooLarge { size: usize, limit: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("malformed beacon: {0}")]
    MalformedBeacon(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
}

fn malformed(msg: impl Into<String>) -> WireError {
    WireError::MalformedPayload(msg.into())
}

/// 48-bit node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u64);

impl NodeId {
    pub const MAX: u64 = (1 << 48) - 1;

    pub fn new(id: u64) -> Result<Self, WireError> {
        if id > Self::MAX {
            return Err(WireError::InvalidField(format!("node id {id} exceeds 48 bits")));
        }
        Ok(Self(id))
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub u16);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Producer-assigned version of a variable. Compared as plain integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SeqNo(pub u64);

impl SeqNo {
    pub fn next(self) -> Self {
        SeqNo(self.0 + 1)
    }
}

/// Opaque variable contents, at most [`MAX_VALUE_LEN`] bytes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VarValue(Vec<u8>);

impl VarValue {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, WireError> {
        let bytes = bytes.into();
        if bytes.len() > MAX_VALUE_LEN {
            return Err(WireError::InvalidField(format!(
                "value length {} exceeds {MAX_VALUE_LEN}",
                bytes.len()
            )));
        }
        Ok(Self(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableSpecification {
    pub var_id: VarId,
    pub producer: NodeId,
    pub rep_cnt: u8,
    pub description: String,
}

impl VariableSpecification {
    pub fn new(
        var_id: VarId,
        producer: NodeId,
        rep_cnt: u8,
        description: impl Into<String>,
    ) -> Result<Self, WireError> {
        let spec = Self {
            var_id,
            producer,
            rep_cnt,
            description: description.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.rep_cnt == 0 || self.rep_cnt > MAX_REP_CNT {
            return Err(WireError::InvalidField(format!(
                "repCnt {} outside 1..={MAX_REP_CNT}",
                self.rep_cnt
            )));
        }
        if self.description.len() > MAX_DESCRIPTION_LEN {
            return Err(WireError::InvalidField(format!(
                "description of {} bytes exceeds {MAX_DESCRIPTION_LEN}",
                self.description.len()
            )));
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        2 + 6 + 1 + 1 + self.description.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarUpdateRecord {
    pub var_id: VarId,
    pub seqno: SeqNo,
    pub value: VarValue,
}

impl VarUpdateRecord {
    pub fn encoded_len(&self) -> usize {
        2 + 4 + 1 + self.value.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarSummaryRecord {
    pub var_id: VarId,
    pub seqno: SeqNo,
}

/// Asks neighbours for anything strictly newer than `seqno`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarReqUpdateRecord {
    pub var_id: VarId,
    pub seqno: SeqNo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarCreateRecord {
    pub spec: VariableSpecification,
    pub initial: VarUpdateRecord,
}

impl VarCreateRecord {
    pub fn encoded_len(&self) -> usize {
        self.spec.encoded_len() + self.initial.encoded_len()
    }
}

/// Section kinds in transmission priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum SectionType {
    Create = 1,
    Delete = 2,
    Update = 3,
    Summary = 4,
    ReqCreate = 5,
    ReqUpdate = 6,
}

impl SectionType {
    pub const ALL: [SectionType; 6] = [
        SectionType::Create,
        SectionType::Delete,
        SectionType::Update,
        SectionType::Summary,
        SectionType::ReqCreate,
        SectionType::ReqUpdate,
    ];

    pub fn from_byte(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }
}

/// The six instruction sections of a VarDis payload.
///
/// Keeping one vector per section makes the priority order structural: an
/// empty vector is an absent section, and encoding always walks them in
/// [`SectionType`] order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VarDisPayload {
    pub creates: Vec<VarCreateRecord>,
    pub deletes: Vec<VarId>,
    pub updates: Vec<VarUpdateRecord>,
    pub summaries: Vec<VarSummaryRecord>,
    pub create_requests: Vec<VarId>,
    pub update_requests: Vec<VarReqUpdateRecord>,
}

impl VarDisPayload {
    pub fn is_empty(&self) -> bool {
        self.section_types().next().is_none()
    }

    /// Section types present, in wire order.
    pub fn section_types(&self) -> impl Iterator<Item = SectionType> + '_ {
        SectionType::ALL.into_iter().filter(|t| self.record_count(*t) > 0)
    }

    pub fn record_count(&self, section: SectionType) -> usize {
        match section {
            SectionType::Create => self.creates.len(),
            SectionType::Delete => self.deletes.len(),
            SectionType::Update => self.updates.len(),
            SectionType::Summary => self.summaries.len(),
            SectionType::ReqCreate => self.create_requests.len(),
            SectionType::ReqUpdate => self.update_requests.len(),
        }
    }

    /// Analytic encoded size: section headers plus record sizes.
    pub fn encoded_len(&self) -> usize {
        let headers = self.section_types().count() * SECTION_HEADER_LEN;
        headers
            + self.creates.iter().map(VarCreateRecord::encoded_len).sum::<usize>()
            + self.deletes.len() * VAR_ID_RECORD_LEN
            + self.updates.iter().map(VarUpdateRecord::encoded_len).sum::<usize>()
            + self.summaries.len() * SUMMARY_RECORD_LEN
            + self.create_requests.len() * VAR_ID_RECORD_LEN
            + self.update_requests.len() * SUMMARY_RECORD_LEN
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn with_capacity(n: usize) -> Self {
        Self {
            buf: Vec::with_capacity(n),
        }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn node(&mut self, id: NodeId) {
        self.buf.extend_from_slice(&id.0.to_le_bytes()[..6]);
    }

    fn seqno(&mut self, s: SeqNo) -> Result<(), WireError> {
        let v = u32::try_from(s.0)
            .map_err(|_| WireError::InvalidField(format!("seqno {} exceeds 32 bits", s.0)))?;
        self.u32(v);
        Ok(())
    }

    fn count(&mut self, n: usize) -> Result<(), WireError> {
        let n = u8::try_from(n)
            .map_err(|_| WireError::InvalidField(format!("{n} records exceed one count byte")))?;
        self.u8(n);
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(malformed(format!(
                "truncated at offset {}: need {n} bytes, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn node(&mut self) -> Result<NodeId, WireError> {
        let b = self.take(6)?;
        let mut raw = [0u8; 8];
        raw[..6].copy_from_slice(b);
        Ok(NodeId(u64::from_le_bytes(raw)))
    }

    fn var_id(&mut self) -> Result<VarId, WireError> {
        Ok(VarId(self.u16()?))
    }

    fn seqno(&mut self) -> Result<SeqNo, WireError> {
        Ok(SeqNo(u64::from(self.u32()?)))
    }
}

fn write_update(w: &mut Writer, r: &VarUpdateRecord) -> Result<(), WireError> {
    w.u16(r.var_id.0);
    w.seqno(r.seqno)?;
    w.u8(r.value.len() as u8);
    w.bytes(r.value.as_bytes());
    Ok(())
}

fn read_update(r: &mut Reader<'_>) -> Result<VarUpdateRecord, WireError> {
    let var_id = r.var_id()?;
    let seqno = r.seqno()?;
    let len = r.u8()? as usize;
    if len > MAX_VALUE_LEN {
        return Err(malformed(format!("value length {len} exceeds {MAX_VALUE_LEN}")));
    }
    let value = VarValue(r.take(len)?.to_vec());
    Ok(VarUpdateRecord {
        var_id,
        seqno,
        value,
    })
}

fn write_spec(w: &mut Writer, s: &VariableSpecification) -> Result<(), WireError> {
    s.validate()?;
    w.u16(s.var_id.0);
    w.node(s.producer);
    w.u8(s.rep_cnt);
    w.u8(s.description.len() as u8);
    w.bytes(s.description.as_bytes());
    Ok(())
}

fn read_spec(r: &mut Reader<'_>) -> Result<VariableSpecification, WireError> {
    let var_id = r.var_id()?;
    let producer = r.node()?;
    let rep_cnt = r.u8()?;
    let len = r.u8()? as usize;
    let description = std::str::from_utf8(r.take(len)?)
        .map_err(|_| malformed("description is not UTF-8"))?
        .to_owned();
    let spec = VariableSpecification {
        var_id,
        producer,
        rep_cnt,
        description,
    };
    spec.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(spec)
}

/// Encodes a single update record, as carried by flooding packets.
pub fn encode_update_record(record: &VarUpdateRecord) -> Result<Vec<u8>, WireError> {
    let mut w = Writer::with_capacity(record.encoded_len());
    write_update(&mut w, record)?;
    Ok(w.buf)
}

pub fn decode_update_record(bytes: &[u8]) -> Result<VarUpdateRecord, WireError> {
    let mut r = Reader::new(bytes);
    let record = read_update(&mut r)?;
    if !r.is_empty() {
        return Err(malformed("trailing bytes after update record"));
    }
    Ok(record)
}

/// Encodes `payload`, failing if the result would exceed `limit` bytes.
pub fn encode_payload(payload: &VarDisPayload, limit: usize) -> Result<Vec<u8>, WireError> {
    let size = payload.encoded_len();
    if size > limit {
        return Err(WireError::EncodedTooLarge { size, limit });
    }
    let mut w = Writer::with_capacity(size);
    for section in payload.section_types() {
        w.u8(section as u8);
        w.count(payload.record_count(section))?;
        match section {
            SectionType::Create => {
                for c in &payload.creates {
                    if c.spec.var_id != c.initial.var_id {
                        return Err(WireError::InvalidField(format!(
                            "create record spec {} carries value for {}",
                            c.spec.var_id, c.initial.var_id
                        )));
                    }
                    write_spec(&mut w, &c.spec)?;
                    write_update(&mut w, &c.initial)?;
                }
            }
            SectionType::Delete => payload.deletes.iter().for_each(|v| w.u16(v.0)),
            SectionType::Update => {
                for u in &payload.updates {
                    write_update(&mut w, u)?;
                }
            }
            SectionType::Summary => {
                for s in &payload.summaries {
                    w.u16(s.var_id.0);
                    w.seqno(s.seqno)?;
                }
            }
            SectionType::ReqCreate => payload.create_requests.iter().for_each(|v| w.u16(v.0)),
            SectionType::ReqUpdate => {
                for s in &payload.update_requests {
                    w.u16(s.var_id.0);
                    w.seqno(s.seqno)?;
                }
            }
        }
    }
    debug_assert_eq!(w.buf.len(), size);
    Ok(w.buf)
}

/// Decodes a payload produced by [`encode_payload`].
///
/// Rejects truncation, unknown section types, empty sections and sections
/// out of priority order.
pub fn decode_payload(bytes: &[u8]) -> Result<VarDisPayload, WireError> {
    let mut r = Reader::new(bytes);
    let mut payload = VarDisPayload::default();
    let mut last: Option<SectionType> = None;
    while !r.is_empty() {
        let raw = r.u8()?;
        let section = SectionType::from_byte(raw)
            .ok_or_else(|| malformed(format!("unknown section type {raw}")))?;
        if last.is_some_and(|prev| section <= prev) {
            return Err(malformed(format!(
                "section {section:?} after {:?} violates priority order",
                last.unwrap()
            )));
        }
        last = Some(section);
        let count = r.u8()? as usize;
        if count == 0 {
            return Err(malformed(format!("empty {section:?} section")));
        }
        for _ in 0..count {
            match section {
                SectionType::Create => {
                    let spec = read_spec(&mut r)?;
                    let initial = read_update(&mut r)?;
                    if spec.var_id != initial.var_id {
                        return Err(malformed("create record varId mismatch"));
                    }
                    payload.creates.push(VarCreateRecord { spec, initial });
                }
                SectionType::Delete => payload.deletes.push(r.var_id()?),
                SectionType::Update => payload.updates.push(read_update(&mut r)?),
                SectionType::Summary => payload.summaries.push(VarSummaryRecord {
                    var_id: r.var_id()?,
                    seqno: r.seqno()?,
                }),
                SectionType::ReqCreate => payload.create_requests.push(r.var_id()?),
                SectionType::ReqUpdate => payload.update_requests.push(VarReqUpdateRecord {
                    var_id: r.var_id()?,
                    seqno: r.seqno()?,
                }),
            }
        }
    }
    Ok(payload)
}

/// A client payload carried inside a beacon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientPayload {
    pub client: u8,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beacon {
    pub sender: NodeId,
    pub bp_seqno: u32,
    pub payloads: Vec<ClientPayload>,
}

impl Beacon {
    pub fn encoded_len(&self) -> usize {
        BEACON_HEADER_LEN
            + self
                .payloads
                .iter()
                .map(|p| BEACON_PAYLOAD_HEADER_LEN + p.bytes.len())
                .sum::<usize>()
    }
}

pub fn encode_beacon(beacon: &Beacon, limit: usize) -> Result<Vec<u8>, WireError> {
    let size = beacon.encoded_len();
    if size > limit {
        return Err(WireError::EncodedTooLarge { size, limit });
    }
    let mut w = Writer::with_capacity(size);
    w.u8(BEACON_VERSION);
    w.node(beacon.sender);
    w.u32(beacon.bp_seqno);
    for p in &beacon.payloads {
        let len = u8::try_from(p.bytes.len()).map_err(|_| {
            WireError::InvalidField(format!("client payload of {} bytes", p.bytes.len()))
        })?;
        w.u8(p.client);
        w.u8(len);
        w.bytes(&p.bytes);
    }
    Ok(w.buf)
}

pub fn decode_beacon(bytes: &[u8]) -> Result<Beacon, WireError> {
    let as_beacon_err = |e: WireError| match e {
        WireError::MalformedPayload(m) => WireError::MalformedBeacon(m),
        other => other,
    };
    let mut r = Reader::new(bytes);
    let version = r.u8().map_err(as_beacon_err)?;
    if version != BEACON_VERSION {
        return Err(WireError::MalformedBeacon(format!("unsupported version {version}")));
    }
    let sender = r.node().map_err(as_beacon_err)?;
    let bp_seqno = r.u32().map_err(as_beacon_err)?;
    let mut payloads = Vec::new();
    while !r.is_empty() {
        let client = r.u8().map_err(as_beacon_err)?;
        let len = r.u8().map_err(as_beacon_err)? as usize;
        let bytes = r.take(len).map_err(as_beacon_err)?.to_vec();
        payloads.push(ClientPayload { client, bytes });
    }
    Ok(Beacon {
        sender,
        bp_seqno,
        payloads,
    })
}
