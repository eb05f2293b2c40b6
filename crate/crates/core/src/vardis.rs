//! The VarDis state machine.
//!
//! A [`VarDis`] entity owns one node's real-time database. Applications
//! call the CRUD methods; the node's beacon loop calls [`VarDis::make_payload`]
//! before each beacon and [`VarDis::process_payload`] for every payload
//! received from a neighbour.
//!
//! Modifying instructions are repeated in `repCnt` distinct payloads by
//! every node that learns of them. Summaries advertise `(varId, seqno)`
//! pairs round-robin so neighbours can request what they missed.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::wire::{
    NodeId, SeqNo, VarCreateRecord, VarDisPayload, VarId, VarReqUpdateRecord, VarSummaryRecord,
    VarUpdateRecord, VarValue, VariableSpecification, WireError, SECTION_HEADER_LEN,
    SUMMARY_RECORD_LEN, VAR_ID_RECORD_LEN,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VarDisError {
    #[error("variable {0} already exists")]
    VariableExists(VarId),
    #[error("variable {0} not found")]
    NotFound(VarId),
    #[error("node {node} is not the producer of {var_id}")]
    NotProducer { var_id: VarId, node: NodeId },
    #[error("variable {0} is being deleted")]
    BeingDeleted(VarId),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDisConfig {
    /// Upper bound on records in the summary section (`maxSumCnt`).
    pub max_summaries: usize,
    pub summaries_enabled: bool,
    /// Include every known variable's current value in every payload,
    /// ignoring repetition counters.
    pub always_repeat: bool,
    /// How long a deleted variable's id is remembered, in seconds.
    pub tombstone_ttl: f64,
}

impl Default for VarDisConfig {
    fn default() -> Self {
        Self {
            max_summaries: 10,
            summaries_enabled: true,
            always_repeat: false,
            tombstone_ttl: 3.0,
        }
    }
}

impl VarDisConfig {
    /// Tombstone lifetime of `10 * repCnt / beta` seconds.
    pub fn tombstone_ttl_for(rep_cnt: u8, beacon_rate_hz: f64) -> f64 {
        10.0 * f64::from(rep_cnt) / beacon_rate_hz
    }
}

/// One row of the real-time database.
#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseEntry {
    pub spec: VariableSpecification,
    pub value: VarValue,
    pub seqno: SeqNo,
    pub last_update_received: f64,
    pub count_create: u8,
    pub count_update: u8,
    pub count_delete: u8,
    pub to_be_deleted: bool,
    create_sent_at: f64,
    update_sent_at: f64,
}

impl DatabaseEntry {
    fn new(spec: VariableSpecification, value: VarValue, seqno: SeqNo, now: f64) -> Self {
        Self {
            spec,
            value,
            seqno,
            last_update_received: now,
            count_create: 0,
            count_update: 0,
            count_delete: 0,
            to_be_deleted: false,
            create_sent_at: f64::NEG_INFINITY,
            update_sent_at: f64::NEG_INFINITY,
        }
    }

    fn rep_cnt(&self) -> u8 {
        self.spec.rep_cnt
    }

    fn update_record(&self) -> VarUpdateRecord {
        VarUpdateRecord {
            var_id: self.spec.var_id,
            seqno: self.seqno,
            value: self.value.clone(),
        }
    }

    fn create_record(&self) -> VarCreateRecord {
        VarCreateRecord {
            spec: self.spec.clone(),
            initial: self.update_record(),
        }
    }
}

/// Per-variable transmit bookkeeping, used to check repetition bounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UpdateStats {
    /// Times the update counter was (re)armed to `repCnt`.
    pub arms: u64,
    /// Update records placed into payloads.
    pub inclusions: u64,
}

/// What a received payload changed in the database.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateChange {
    /// A previously unknown variable was added.
    Created { var_id: VarId, seqno: SeqNo },
    /// A strictly newer value was adopted.
    Updated { var_id: VarId, seqno: SeqNo },
    DeleteScheduled(VarId),
    CreateRequested(VarId),
    UpdateRequested { var_id: VarId, seqno: SeqNo },
    /// The local value will be re-sent to correct a stale or requesting
    /// neighbour.
    UpdateRearmed(VarId),
    CreateRearmed(VarId),
}

#[derive(Debug, Clone, Default)]
pub struct RealTimeDatabase {
    entries: BTreeMap<VarId, DatabaseEntry>,
    tombstones: BTreeMap<VarId, f64>,
    summary_cursor: Option<VarId>,
    create_requests: BTreeSet<VarId>,
    update_requests: BTreeMap<VarId, SeqNo>,
}

impl RealTimeDatabase {
    pub fn get(&self, var_id: VarId) -> Option<&DatabaseEntry> {
        self.entries.get(&var_id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &DatabaseEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pending_create_requests(&self) -> impl Iterator<Item = VarId> + '_ {
        self.create_requests.iter().copied()
    }

    pub fn pending_update_requests(&self) -> impl Iterator<Item = (VarId, SeqNo)> + '_ {
        self.update_requests.iter().map(|(v, s)| (*v, *s))
    }

    pub fn is_tombstoned(&self, var_id: VarId, now: f64) -> bool {
        self.tombstones.get(&var_id).is_some_and(|&expiry| expiry > now)
    }

    fn live(&self, var_id: VarId) -> Option<&DatabaseEntry> {
        self.entries.get(&var_id).filter(|e| !e.to_be_deleted)
    }
}

/// One node's VarDis entity.
#[derive(Debug, Clone)]
pub struct VarDis {
    node: NodeId,
    config: VarDisConfig,
    db: RealTimeDatabase,
    stats: BTreeMap<VarId, UpdateStats>,
}

impl VarDis {
    pub fn new(node: NodeId, config: VarDisConfig) -> Self {
        Self {
            node,
            config,
            db: RealTimeDatabase::default(),
            stats: BTreeMap::new(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn config(&self) -> &VarDisConfig {
        &self.config
    }

    pub fn db(&self) -> &RealTimeDatabase {
        &self.db
    }

    pub fn update_stats(&self, var_id: VarId) -> UpdateStats {
        self.stats.get(&var_id).copied().unwrap_or_default()
    }

    fn arm_update(&mut self, var_id: VarId) {
        if let Some(e) = self.db.entries.get_mut(&var_id) {
            e.count_update = e.spec.rep_cnt;
            self.stats.entry(var_id).or_default().arms += 1;
        }
    }

    pub fn create_variable(
        &mut self,
        spec: VariableSpecification,
        initial: VarValue,
        now: f64,
    ) -> Result<(), VarDisError> {
        spec.validate()?;
        let var_id = spec.var_id;
        if spec.producer != self.node {
            return Err(VarDisError::NotProducer {
                var_id,
                node: self.node,
            });
        }
        if self.db.entries.contains_key(&var_id) || self.db.is_tombstoned(var_id, now) {
            return Err(VarDisError::VariableExists(var_id));
        }
        self.db.tombstones.remove(&var_id);
        let mut entry = DatabaseEntry::new(spec, initial, SeqNo(0), now);
        entry.count_create = entry.rep_cnt();
        self.db.entries.insert(var_id, entry);
        self.db.create_requests.remove(&var_id);
        self.db.update_requests.remove(&var_id);
        Ok(())
    }

    fn producer_entry(&mut self, var_id: VarId) -> Result<&mut DatabaseEntry, VarDisError> {
        let node = self.node;
        let entry = self
            .db
            .entries
            .get_mut(&var_id)
            .ok_or(VarDisError::NotFound(var_id))?;
        if entry.spec.producer != node {
            return Err(VarDisError::NotProducer { var_id, node });
        }
        if entry.to_be_deleted {
            return Err(VarDisError::BeingDeleted(var_id));
        }
        Ok(entry)
    }

    pub fn update_variable(
        &mut self,
        var_id: VarId,
        value: VarValue,
        now: f64,
    ) -> Result<SeqNo, VarDisError> {
        let entry = self.producer_entry(var_id)?;
        entry.seqno = entry.seqno.next();
        entry.value = value;
        entry.last_update_received = now;
        let seqno = entry.seqno;
        self.arm_update(var_id);
        Ok(seqno)
    }

    pub fn delete_variable(&mut self, var_id: VarId, _now: f64) -> Result<(), VarDisError> {
        let entry = self.producer_entry(var_id)?;
        Self::mark_deleted(entry);
        self.db.update_requests.remove(&var_id);
        Ok(())
    }

    fn mark_deleted(entry: &mut DatabaseEntry) {
        entry.to_be_deleted = true;
        entry.count_delete = entry.rep_cnt();
        entry.count_create = 0;
        entry.count_update = 0;
    }

    /// Current value, its seqno and when it was received.
    pub fn read_variable(&self, var_id: VarId) -> Result<(&VarValue, SeqNo, f64), VarDisError> {
        self.db
            .entries
            .get(&var_id)
            .map(|e| (&e.value, e.seqno, e.last_update_received))
            .ok_or(VarDisError::NotFound(var_id))
    }

    /// Builds the payload for the next beacon, or `None` if every section
    /// would be empty.
    ///
    /// Sections are filled in priority order. Within create, delete and
    /// update sections, records that waited longest since their last
    /// transmission go first (ties by ascending `VarId`), and records that
    /// do not fit the remaining space are skipped.
    pub fn make_payload(&mut self, max_payload_size: usize, now: f64) -> Option<VarDisPayload> {
        self.db.tombstones.retain(|_, expiry| *expiry > now);
        let mut budget = Budget::new(max_payload_size);
        let mut payload = VarDisPayload::default();

        // Creates.
        let mut order: Vec<(f64, VarId)> = self
            .db
            .entries
            .values()
            .filter(|e| e.count_create > 0 && !e.to_be_deleted)
            .map(|e| (e.create_sent_at, e.spec.var_id))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, var_id) in order {
            let e = self.db.entries.get_mut(&var_id).expect("listed entry");
            let record = e.create_record();
            if budget.try_add(payload.creates.is_empty(), record.encoded_len()) {
                e.count_create -= 1;
                e.create_sent_at = now;
                payload.creates.push(record);
            }
        }

        // Deletes.
        let mut drained = Vec::new();
        for e in self.db.entries.values_mut() {
            if e.to_be_deleted
                && e.count_delete > 0
                && budget.try_add(payload.deletes.is_empty(), VAR_ID_RECORD_LEN)
            {
                e.count_delete -= 1;
                payload.deletes.push(e.spec.var_id);
                if e.count_delete == 0 {
                    drained.push(e.spec.var_id);
                }
            }
        }
        for var_id in drained {
            self.db.entries.remove(&var_id);
            self.db
                .tombstones
                .insert(var_id, now + self.config.tombstone_ttl);
        }

        // Updates.
        let always = self.config.always_repeat;
        let mut order: Vec<(f64, VarId)> = self
            .db
            .entries
            .values()
            .filter(|e| !e.to_be_deleted && (always || e.count_update > 0))
            .map(|e| (e.update_sent_at, e.spec.var_id))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, var_id) in order {
            let e = self.db.entries.get_mut(&var_id).expect("listed entry");
            let record = e.update_record();
            if budget.try_add(payload.updates.is_empty(), record.encoded_len()) {
                e.count_update = e.count_update.saturating_sub(1);
                e.update_sent_at = now;
                payload.updates.push(record);
                self.stats.entry(var_id).or_default().inclusions += 1;
            }
        }

        // Summaries, round-robin from the cursor.
        if self.config.summaries_enabled && self.config.max_summaries > 0 {
            let start = self.db.summary_cursor.unwrap_or(VarId(0));
            let ring = self
                .db
                .entries
                .range(start..)
                .chain(self.db.entries.range(..start))
                .map(|(_, e)| e)
                .filter(|e| !e.to_be_deleted);
            let mut last = None;
            for e in ring {
                if payload.summaries.len() >= self.config.max_summaries
                    || !budget.try_add(payload.summaries.is_empty(), SUMMARY_RECORD_LEN)
                {
                    break;
                }
                payload.summaries.push(VarSummaryRecord {
                    var_id: e.spec.var_id,
                    seqno: e.seqno,
                });
                last = Some(e.spec.var_id);
            }
            if let Some(last) = last {
                self.db.summary_cursor = self
                    .db
                    .entries
                    .range(VarId(last.0.saturating_add(1))..)
                    .next()
                    .filter(|_| last.0 < u16::MAX)
                    .map(|(id, _)| *id);
            }
        }

        // Create requests.
        let requested: Vec<VarId> = self.db.create_requests.iter().copied().collect();
        for var_id in requested {
            if !budget.try_add(payload.create_requests.is_empty(), VAR_ID_RECORD_LEN) {
                break;
            }
            self.db.create_requests.remove(&var_id);
            payload.create_requests.push(var_id);
        }

        // Update requests name the requester's current seqno.
        let requested: Vec<VarId> = self.db.update_requests.keys().copied().collect();
        for var_id in requested {
            let Some(seqno) = self.db.live(var_id).map(|e| e.seqno) else {
                self.db.update_requests.remove(&var_id);
                continue;
            };
            if !budget.try_add(payload.update_requests.is_empty(), SUMMARY_RECORD_LEN) {
                break;
            }
            self.db.update_requests.remove(&var_id);
            payload
                .update_requests
                .push(VarReqUpdateRecord { var_id, seqno });
        }

        (!payload.is_empty()).then_some(payload)
    }

    /// Applies a neighbour's payload to the local database.
    pub fn process_payload(&mut self, payload: &VarDisPayload, now: f64) -> Vec<StateChange> {
        let mut changes = Vec::new();

        for c in &payload.creates {
            let var_id = c.spec.var_id;
            if c.spec.var_id != c.initial.var_id
                || c.spec.validate().is_err()
                || self.db.entries.contains_key(&var_id)
                || self.db.is_tombstoned(var_id, now)
            {
                continue;
            }
            let mut entry =
                DatabaseEntry::new(c.spec.clone(), c.initial.value.clone(), c.initial.seqno, now);
            entry.count_create = entry.rep_cnt();
            self.db.entries.insert(var_id, entry);
            self.db.create_requests.remove(&var_id);
            self.db.update_requests.remove(&var_id);
            changes.push(StateChange::Created {
                var_id,
                seqno: c.initial.seqno,
            });
        }

        for &var_id in &payload.deletes {
            if let Some(e) = self.db.entries.get_mut(&var_id) {
                if !e.to_be_deleted {
                    Self::mark_deleted(e);
                    self.db.update_requests.remove(&var_id);
                    changes.push(StateChange::DeleteScheduled(var_id));
                }
            }
        }

        for u in &payload.updates {
            let Some(e) = self.db.entries.get_mut(&u.var_id) else {
                continue;
            };
            if e.to_be_deleted || u.seqno == e.seqno {
                continue;
            }
            if u.seqno > e.seqno {
                e.seqno = u.seqno;
                e.value = u.value.clone();
                e.last_update_received = now;
                let seqno = e.seqno;
                self.arm_update(u.var_id);
                self.db.update_requests.remove(&u.var_id);
                changes.push(StateChange::Updated {
                    var_id: u.var_id,
                    seqno,
                });
            } else {
                self.arm_update(u.var_id);
                changes.push(StateChange::UpdateRearmed(u.var_id));
            }
        }

        for s in &payload.summaries {
            match self.db.entries.get(&s.var_id) {
                None if !self.db.is_tombstoned(s.var_id, now) => {
                    if self.db.create_requests.insert(s.var_id) {
                        changes.push(StateChange::CreateRequested(s.var_id));
                    }
                }
                Some(e) if !e.to_be_deleted && s.seqno > e.seqno => {
                    let seqno = e.seqno;
                    if self.db.update_requests.insert(s.var_id, seqno).is_none() {
                        changes.push(StateChange::UpdateRequested {
                            var_id: s.var_id,
                            seqno,
                        });
                    }
                }
                _ => {}
            }
        }

        for &var_id in &payload.create_requests {
            if let Some(e) = self.db.entries.get_mut(&var_id) {
                if !e.to_be_deleted {
                    e.count_create = e.spec.rep_cnt;
                    changes.push(StateChange::CreateRearmed(var_id));
                }
            }
        }

        for r in &payload.update_requests {
            if self.db.live(r.var_id).is_some_and(|e| e.seqno > r.seqno) {
                self.arm_update(r.var_id);
                changes.push(StateChange::UpdateRearmed(r.var_id));
            }
        }

        changes
    }
}

/// Remaining payload space, charging a section header with the first
/// record of each section.
struct Budget {
    remaining: usize,
}

impl Budget {
    fn new(max: usize) -> Self {
        Self { remaining: max }
    }

    fn try_add(&mut self, opens_section: bool, record_len: usize) -> bool {
        let needed = record_len + if opens_section { SECTION_HEADER_LEN } else { 0 };
        if needed > self.remaining {
            return false;
        }
        self.remaining -= needed;
        true
    }
}
