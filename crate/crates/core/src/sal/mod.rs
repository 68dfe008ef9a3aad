//! Storage Abstraction Layer: the master-side library that writes database
//! log buffers to Log Stores, ships per-slice fragments to Page Stores,
//! tracks the LSN frontiers, truncates the log, repairs lost records and
//! runs redo recovery.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::Config;
use crate::logstore::{
    ChainEntry, LogStoreCluster, LogStoreError, MetadataRecord, PLogId, PLogKind, PLogState,
    ReadPurpose,
};
use crate::msg::{Extent, MasterMessage, Message, ResyncSnapshot};
use crate::pagestore::{Coverage, PageStoreNode};
use crate::record::{page_to_slice, DatabaseLogBuffer, LogFragment, LogRecord, Op, PageImage};
use crate::types::{Lsn, NodeId, PageId, SliceId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SalError {
    #[error("empty log buffer")]
    EmptyBuffer,
    #[error(transparent)]
    LogStore(#[from] LogStoreError),
    #[error("no replica of slice {0} can serve the read")]
    SliceUnrecoverable(SliceId),
    #[error("records ({after}, {through}] of slice {slice} lost from every copy")]
    RecordsUnrecoverable {
        slice: SliceId,
        after: Lsn,
        through: Lsn,
    },
}

/// Timers the SAL asks its host to fire later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SalTimer {
    Flush { slice: SliceId, seq: u64 },
    Retry { slice: SliceId, seq: u64 },
}

/// What the SAL needs from the world around it. Log Store appends, reads
/// and Page Store reads are synchronous calls; everything else is a message.
pub trait SalEnv {
    fn now(&self) -> u64;
    fn logstores(&mut self) -> &mut LogStoreCluster;
    /// Log Stores the master can reach right now.
    fn log_reachable(&self) -> BTreeSet<NodeId>;
    /// Synchronous call into a Page Store; `None` if unreachable.
    fn page_store(&mut self, node: &NodeId) -> Option<&mut PageStoreNode>;
    /// Simulated round trip of a synchronous call.
    fn call_latency(&mut self, node: &NodeId) -> u64;
    fn send(&mut self, to: &NodeId, msg: Message);
    fn schedule(&mut self, delay_ms: u64, timer: SalTimer);
    /// Requests an immediate gossip round among the slice's replicas.
    fn gossip(&mut self, slice: SliceId);
    fn trace(&mut self, line: String);
}

#[derive(Debug, Clone)]
pub struct Slot {
    pub node: NodeId,
    pub persistent: Lsn,
    pub ready: bool,
    pub last_seq: u64,
    stale_polls: u32,
    last_polled: Lsn,
}

impl Slot {
    fn new(node: NodeId) -> Self {
        Slot {
            node,
            persistent: Lsn::NONE,
            ready: true,
            last_seq: 0,
            stale_polls: 0,
            last_polled: Lsn::NONE,
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    seq: u64,
    records: Vec<LogRecord>,
    group_ends: BTreeSet<Lsn>,
    bytes: usize,
}

#[derive(Debug, Clone)]
pub struct SliceSal {
    pub slice: SliceId,
    pub slots: Vec<Slot>,
    pending: Option<Pending>,
    next_seq: u64,
    pub last_sent_through: Lsn,
    pub flush_lsn: Lsn,
    inflight: BTreeMap<u64, LogFragment>,
    pub recycle_issued: Lsn,
    /// Ranges missing from some replicas, waiting for gossip.
    partial: Option<(Coverage, u32)>,
}

impl SliceSal {
    fn new(slice: SliceId, nodes: &[NodeId]) -> Self {
        SliceSal {
            slice,
            slots: nodes.iter().cloned().map(Slot::new).collect(),
            pending: None,
            next_seq: 1,
            last_sent_through: Lsn::NONE,
            flush_lsn: Lsn::NONE,
            inflight: BTreeMap::new(),
            recycle_issued: Lsn::NONE,
            partial: None,
        }
    }

    fn lagging(&self) -> bool {
        self.pending.is_some()
            || !self.inflight.is_empty()
            || self
                .slots
                .iter()
                .any(|s| s.persistent < self.last_sent_through)
    }

    fn min_persistent(&self) -> Lsn {
        self.slots
            .iter()
            .map(|s| s.persistent)
            .min()
            .unwrap_or(Lsn::NONE)
    }

    pub fn max_persistent(&self) -> Lsn {
        self.slots
            .iter()
            .filter(|s| s.ready)
            .map(|s| s.persistent)
            .max()
            .unwrap_or(Lsn::NONE)
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        self.slots.iter().map(|s| s.node.clone()).collect()
    }
}

#[derive(Debug, Clone)]
struct BufferInfo {
    extent: Extent,
    /// Last record LSN of each slice at or below this buffer's end.
    slice_last: BTreeMap<SliceId, Lsn>,
}

#[derive(Debug, Clone, Default)]
pub struct SalMetrics {
    pub buffers_written: u64,
    pub log_write_retries: u64,
    pub fragments_sent: u64,
    pub fragments_retried: u64,
    pub resent_records: u64,
    pub truncated_plogs: u64,
    pub mechanism_a: u64,
    pub mechanism_b: u64,
    pub gossip_requests: u64,
    pub read_repairs: u64,
    pub reads_routed: u64,
    pub read_attempts: u64,
    pub metadata_writes: u64,
    pub unrecoverable_ranges: u64,
}

/// Result of a successful [`append_with_retry`].
#[derive(Debug, Clone)]
pub struct Appended {
    pub plog: PLogId,
    pub offset: u64,
    pub attempts: usize,
    pub created: Vec<PLogId>,
}

/// Appends to the active data PLog, sealing it and moving to a freshly
/// placed PLog whenever an append fails or the PLog is full.
/// `before_attempt` runs ahead of every attempt.
pub fn append_with_retry(
    cluster: &mut LogStoreCluster,
    active: &mut Option<PLogId>,
    payload: &[u8],
    max_attempts: usize,
    before_attempt: &mut dyn FnMut(&mut LogStoreCluster),
    reachable: &dyn Fn(&NodeId) -> bool,
) -> Result<Appended, LogStoreError> {
    let mut created = Vec::new();
    let mut last_err = LogStoreError::InsufficientHealthyNodes { healthy: 0 };
    for attempt in 1..=max_attempts.max(1) {
        before_attempt(cluster);
        let id = match *active {
            Some(id) => id,
            None => match cluster.create_plog(PLogKind::Data, reachable) {
                Ok(id) => {
                    created.push(id);
                    *active = Some(id);
                    id
                }
                Err(e) => {
                    last_err = e;
                    continue;
                }
            },
        };
        match cluster.append(id, payload, reachable) {
            Ok(offset) => {
                return Ok(Appended {
                    plog: id,
                    offset,
                    attempts: attempt,
                    created,
                })
            }
            Err(e @ LogStoreError::SizeLimitExceeded { .. }) => {
                cluster.seal(id)?;
                *active = None;
                last_err = e;
            }
            Err(
                e @ (LogStoreError::AppendFailed { .. }
                | LogStoreError::Sealed(_)
                | LogStoreError::UnknownPLog(_)),
            ) => {
                *active = None;
                last_err = e;
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err)
}

#[derive(Debug)]
pub struct Sal {
    cfg: Config,
    next_lsn: Lsn,
    active: Option<PLogId>,
    chain: Vec<PLogId>,
    pub cv: Lsn,
    pub db_persistent: Lsn,
    checkpointed: Lsn,
    /// Highest LSN whose PLog has been deleted.
    log_start: Lsn,
    slices: BTreeMap<SliceId, SliceSal>,
    /// Database buffers not yet visible, by last LSN, with the fragments
    /// still owing a first acknowledgement.
    outstanding: BTreeMap<Lsn, BTreeSet<(SliceId, u64)>>,
    frag_buffers: BTreeMap<(SliceId, u64), Vec<Lsn>>,
    buffers: Vec<BufferInfo>,
    slice_last: BTreeMap<SliceId, Lsn>,
    since_checkpoint: u64,
    epoch: u64,
    replicas: Vec<NodeId>,
    /// Latest (min TV-LSN, visible LSN) reported by each read replica.
    replica_reports: BTreeMap<NodeId, (Lsn, Lsn)>,
    latency: BTreeMap<NodeId, f64>,
    tiebreak: BTreeMap<NodeId, u64>,
    throttle_until: u64,
    master_seq: u64,
    rng: ChaCha8Rng,
    pub metrics: SalMetrics,
}

impl Sal {
    pub fn new(
        cfg: &Config,
        placement: &BTreeMap<SliceId, Vec<NodeId>>,
        replicas: Vec<NodeId>,
        seed: u64,
    ) -> Self {
        Sal {
            cfg: cfg.clone(),
            next_lsn: Lsn(1),
            active: None,
            chain: Vec::new(),
            cv: Lsn::NONE,
            db_persistent: Lsn::NONE,
            checkpointed: Lsn::NONE,
            log_start: Lsn::NONE,
            slices: placement
                .iter()
                .map(|(s, nodes)| (*s, SliceSal::new(*s, nodes)))
                .collect(),
            outstanding: BTreeMap::new(),
            frag_buffers: BTreeMap::new(),
            buffers: Vec::new(),
            slice_last: BTreeMap::new(),
            since_checkpoint: 0,
            epoch: 0,
            replicas,
            replica_reports: BTreeMap::new(),
            latency: BTreeMap::new(),
            tiebreak: BTreeMap::new(),
            throttle_until: 0,
            master_seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5341_4c00),
            metrics: SalMetrics::default(),
        }
    }

    pub fn slice(&self, s: SliceId) -> Option<&SliceSal> {
        self.slices.get(&s)
    }

    pub fn slices(&self) -> impl Iterator<Item = &SliceSal> {
        self.slices.values()
    }

    pub fn next_lsn(&self) -> Lsn {
        self.next_lsn
    }

    pub fn chain(&self) -> &[PLogId] {
        &self.chain
    }

    pub fn log_start(&self) -> Lsn {
        self.log_start
    }

    pub fn checkpointed(&self) -> Lsn {
        self.checkpointed
    }

    pub fn throttled(&self, now: u64) -> bool {
        now < self.throttle_until
    }

    pub fn slice_of(&self, page: PageId) -> SliceId {
        page_to_slice(page, self.cfg.pages_per_slice, self.cfg.db)
    }

    /// Smallest recycle LSN issued to any slice.
    pub fn recycle_lsn(&self) -> Lsn {
        self.slices
            .values()
            .map(|s| s.recycle_issued)
            .min()
            .unwrap_or(Lsn::NONE)
    }

    /// Writes one group of page mutations as a database log buffer and
    /// distributes its records to the per-slice buffers. Returns the
    /// buffer's last LSN once it is durable in the Log Stores.
    pub fn write_group<E: SalEnv>(
        &mut self,
        env: &mut E,
        ops: Vec<(PageId, Op)>,
    ) -> Result<Lsn, SalError> {
        if ops.is_empty() {
            return Err(SalError::EmptyBuffer);
        }
        let first = self.next_lsn;
        let records: Vec<LogRecord> = ops
            .into_iter()
            .enumerate()
            .map(|(i, (page, op))| LogRecord {
                slice: self.slice_of(page),
                page,
                lsn: Lsn(first.0 + i as u64),
                op,
            })
            .collect();
        let buf = DatabaseLogBuffer::new(records).expect("dense ascending lsns");
        let payload = buf.encode();
        let reach = env.log_reachable();
        let appended = append_with_retry(
            env.logstores(),
            &mut self.active,
            &payload,
            self.cfg.log_write_attempts,
            &mut |_| {},
            &|n| reach.contains(n),
        )?;
        self.metrics.log_write_retries += appended.attempts as u64 - 1;
        self.metrics.buffers_written += 1;
        let last = buf.last_lsn();
        self.next_lsn = last.next();
        if !self.chain.contains(&appended.plog) {
            self.chain.push(appended.plog);
            self.write_metadata(env);
        }
        env.trace(format!(
            "sal write lsn={}..{} plog={} off={}",
            first, last, appended.plog, appended.offset
        ));

        let mut touched = BTreeSet::new();
        for r in buf.records {
            let slice = r.slice;
            touched.insert(slice);
            self.slice_last.insert(slice, r.lsn);
            let Some(ss) = self.slices.get_mut(&slice) else {
                continue;
            };
            if ss.pending.is_none() {
                let seq = ss.next_seq;
                ss.next_seq += 1;
                env.schedule(
                    self.cfg.slice_flush_timeout_ms,
                    SalTimer::Flush { slice, seq },
                );
                ss.pending = Some(Pending {
                    seq,
                    records: Vec::new(),
                    group_ends: BTreeSet::new(),
                    bytes: 0,
                });
            }
            let p = ss.pending.as_mut().expect("just set");
            p.bytes += r.encoded_len();
            p.records.push(r);
            let key = (slice, p.seq);
            self.outstanding.entry(last).or_default().insert(key);
            let owners = self.frag_buffers.entry(key).or_default();
            if owners.last() != Some(&last) {
                owners.push(last);
            }
        }
        for slice in &touched {
            if let Some(p) = self.slices.get_mut(slice).and_then(|s| s.pending.as_mut()) {
                p.group_ends.insert(last);
            }
        }
        let extent = Extent {
            plog: appended.plog,
            offset: appended.offset,
            len: payload.len() as u32,
            first,
            last,
        };
        self.buffers.push(BufferInfo {
            extent,
            slice_last: self.slice_last.clone(),
        });
        self.send_master(env, vec![extent], last);
        for slice in touched {
            let full = self.slices[&slice]
                .pending
                .as_ref()
                .is_some_and(|p| p.bytes >= self.cfg.slice_buffer_bytes);
            if full {
                self.flush_slice(env, slice);
            }
        }
        self.since_checkpoint += 1;
        if self.since_checkpoint >= self.cfg.checkpoint_every_buffers {
            self.write_metadata(env);
        }
        Ok(last)
    }

    fn write_metadata<E: SalEnv>(&mut self, env: &mut E) {
        self.epoch += 1;
        let ls = env.logstores();
        let chain: Vec<ChainEntry> = self
            .chain
            .iter()
            .filter_map(|id| ls.plog(*id))
            .map(|p| ChainEntry {
                plog: p.id,
                lsns: p.lsns,
                sealed: p.state == PLogState::Sealed,
            })
            .collect();
        let rec = MetadataRecord {
            chain,
            db_persistent_lsn: self.db_persistent,
            epoch: self.epoch,
        };
        let reach = env.log_reachable();
        match env
            .logstores()
            .write_metadata(self.cfg.db, &rec, self.cfg.log_write_attempts, &|n| {
                reach.contains(n)
            }) {
            Ok(_) => {
                self.metrics.metadata_writes += 1;
                self.checkpointed = self.db_persistent;
                self.since_checkpoint = 0;
            }
            Err(e) => env.trace(format!("sal metadata write failed: {e}")),
        }
    }

    fn send_master<E: SalEnv>(&mut self, env: &mut E, extents: Vec<Extent>, last: Lsn) {
        if self.replicas.is_empty() {
            return;
        }
        self.master_seq += 1;
        let msg = MasterMessage {
            seq: self.master_seq,
            extents,
            slice_persistent: self
                .slices
                .values()
                .map(|s| (s.slice, s.max_persistent()))
                .collect(),
            last_db_lsn: last,
        }
        .encode();
        for r in self.replicas.clone() {
            env.send(&r, Message::Master(msg.clone()));
        }
    }

    /// Sends the slice's pending buffer to all of its replicas.
    pub fn flush_slice<E: SalEnv>(&mut self, env: &mut E, slice: SliceId) {
        let Some(ss) = self.slices.get_mut(&slice) else {
            return;
        };
        let Some(p) = ss.pending.take() else {
            return;
        };
        let through = p
            .records
            .last()
            .map(|r| r.lsn)
            .unwrap_or(ss.last_sent_through);
        let frag = LogFragment {
            slice,
            sequence: p.seq,
            records: p.records,
            group_ends: p.group_ends,
            covers_after: ss.last_sent_through,
            covers_through: through,
        };
        ss.last_sent_through = through;
        ss.inflight.insert(p.seq, frag.clone());
        for n in ss.nodes() {
            env.send(&n, Message::WriteLogs(frag.clone()));
        }
        self.metrics.fragments_sent += 1;
        env.schedule(
            self.cfg.fragment_retry_ms,
            SalTimer::Retry { slice, seq: p.seq },
        );
    }

    pub fn on_timer<E: SalEnv>(&mut self, env: &mut E, timer: SalTimer) {
        match timer {
            SalTimer::Flush { slice, seq } => {
                let due = self.slices[&slice]
                    .pending
                    .as_ref()
                    .is_some_and(|p| p.seq == seq);
                if due {
                    self.flush_slice(env, slice);
                }
            }
            SalTimer::Retry { slice, seq } => {
                let ss = &self.slices[&slice];
                if let Some(f) = ss.inflight.get(&seq) {
                    let f = f.clone();
                    for n in ss.nodes() {
                        env.send(&n, Message::WriteLogs(f.clone()));
                    }
                    self.metrics.fragments_retried += 1;
                    env.schedule(self.cfg.fragment_retry_ms, timer);
                }
            }
        }
    }

    pub fn on_ack<E: SalEnv>(
        &mut self,
        env: &mut E,
        from: &NodeId,
        ack: &crate::pagestore::WriteAck,
    ) {
        if ack.throttle {
            self.throttle_until = env.now() + self.cfg.throttle_delay_ms;
        }
        self.observe(
            env,
            ack.slice,
            from,
            ack.persistent,
            ack.ready,
            ack.sequence,
        );
        let Some(ss) = self.slices.get_mut(&ack.slice) else {
            return;
        };
        let matches = ss
            .inflight
            .get(&ack.sequence)
            .is_some_and(|f| f.covers_through == ack.through);
        if !matches {
            return;
        }
        let f = ss.inflight.remove(&ack.sequence).expect("checked");
        ss.flush_lsn = ss.flush_lsn.max(f.covers_through);
        let key = (ack.slice, ack.sequence);
        if let Some(owners) = self.frag_buffers.remove(&key) {
            for b in owners {
                if let Some(set) = self.outstanding.get_mut(&b) {
                    set.remove(&key);
                }
            }
        }
        self.advance_cv();
    }

    fn advance_cv(&mut self) {
        while let Some(entry) = self.outstanding.first_entry() {
            if !entry.get().is_empty() {
                break;
            }
            let (b, _) = entry.remove_entry();
            debug_assert!(b >= self.cv);
            self.cv = b;
        }
    }

    pub fn on_poll_reply<E: SalEnv>(
        &mut self,
        env: &mut E,
        from: &NodeId,
        slice: SliceId,
        status: &crate::pagestore::SliceStatus,
    ) {
        self.observe(
            env,
            slice,
            from,
            status.persistent,
            status.ready,
            status.last_seq,
        );
    }

    /// Ingests a persistent LSN report. A ready replica reporting less than
    /// previously recorded triggers a resend from the Log Stores.
    fn observe<E: SalEnv>(
        &mut self,
        env: &mut E,
        slice: SliceId,
        node: &NodeId,
        persistent: Lsn,
        ready: bool,
        last_seq: u64,
    ) {
        let Some(ss) = self.slices.get_mut(&slice) else {
            return;
        };
        let Some(slot) = ss.slots.iter_mut().find(|s| &s.node == node) else {
            return;
        };
        slot.last_seq = slot.last_seq.max(last_seq);
        if !ready {
            slot.ready = false;
            return;
        }
        slot.ready = true;
        let decreased = persistent < slot.persistent;
        let old = slot.persistent;
        slot.persistent = persistent;
        if decreased {
            self.metrics.mechanism_a += 1;
            let lo = ss.min_persistent();
            let hi = ss.last_sent_through;
            let targets = ss.nodes();
            env.trace(format!(
                "sal persistent decrease slice={slice} node={node} {old}->{persistent}; resend ({lo},{hi}]"
            ));
            self.resend(env, slice, &[(lo, hi)], &targets);
        }
    }

    pub fn on_min_tv(&mut self, from: &NodeId, tv: Lsn, visible: Lsn) {
        let e = self
            .replica_reports
            .entry(from.clone())
            .or_insert((Lsn::NONE, Lsn::NONE));
        e.0 = e.0.max(tv);
        e.1 = e.1.max(visible);
    }

    /// Reads this slice's records in `(after, through]` from the Log Stores.
    fn log_records<E: SalEnv>(
        &mut self,
        env: &mut E,
        slice: SliceId,
        after: Lsn,
        through: Lsn,
    ) -> Result<Vec<LogRecord>, LogStoreError> {
        let reach = env.log_reachable();
        let mut out = Vec::new();
        for id in self.chain.clone() {
            let Some(p) = env.logstores().plog(id) else {
                continue;
            };
            let Some(r) = p.lsns else { continue };
            if r.last <= after || r.first > through {
                continue;
            }
            let recs = env
                .logstores()
                .read_records(id, ReadPurpose::Recovery, &|n| reach.contains(n))?;
            out.extend(
                recs.into_iter()
                    .filter(|r| r.slice == slice && r.lsn > after && r.lsn <= through),
            );
        }
        Ok(out)
    }

    /// Resends the slice's records in each range to `targets`, one
    /// sequence-0 fragment per range.
    fn resend<E: SalEnv>(
        &mut self,
        env: &mut E,
        slice: SliceId,
        ranges: &[(Lsn, Lsn)],
        targets: &[NodeId],
    ) -> usize {
        let mut sent = 0;
        for &(a, t) in ranges {
            if t <= a {
                continue;
            }
            let a = if a < self.log_start {
                self.metrics.unrecoverable_ranges += 1;
                env.trace(format!(
                    "sal unrecoverable slice={slice} ({a},{}]",
                    self.log_start.min(t)
                ));
                self.log_start
            } else {
                a
            };
            if t <= a {
                continue;
            }
            let records = match self.log_records(env, slice, a, t) {
                Ok(r) => r,
                Err(e) => {
                    env.trace(format!("sal resend read failed: {e}"));
                    continue;
                }
            };
            sent += records.len();
            self.metrics.resent_records += records.len() as u64;
            let frag = LogFragment {
                slice,
                sequence: 0,
                records,
                group_ends: BTreeSet::new(),
                covers_after: a,
                covers_through: t,
            };
            env.trace(format!(
                "sal resend slice={slice} ({a},{t}] records={}",
                frag.records.len()
            ));
            for n in targets {
                env.send(n, Message::WriteLogs(frag.clone()));
            }
        }
        sent
    }

    /// Missing ranges within `(0, hi]` per replica; unreachable replicas are
    /// treated as missing everything.
    fn missing_by_replica<E: SalEnv>(
        &mut self,
        env: &mut E,
        slice: SliceId,
        hi: Lsn,
    ) -> Vec<(NodeId, Coverage)> {
        let nodes = self.slices[&slice].nodes();
        nodes
            .into_iter()
            .map(|n| {
                let cov = env
                    .page_store(&n)
                    .and_then(|ps| ps.coverage(slice).cloned())
                    .unwrap_or_default();
                (
                    n,
                    Coverage::from_intervals(cov.missing_within(Lsn::NONE, hi)),
                )
            })
            .collect()
    }

    fn mechanism_b<E: SalEnv>(&mut self, env: &mut E, slice: SliceId) {
        self.metrics.mechanism_b += 1;
        let hi = self.slices[&slice].flush_lsn;
        let missing = self.missing_by_replica(env, slice, hi);
        let mut all = Coverage::from_intervals([(Lsn::NONE, hi)]);
        let mut any = Coverage::new();
        for (_, m) in &missing {
            all = all.intersect(m);
            for (a, t) in m.intervals() {
                any.insert(a, t);
            }
        }
        let all_ranges: Vec<(Lsn, Lsn)> = all.intervals().collect();
        env.trace(format!(
            "sal stall slice={slice} missing_all={all_ranges:?} missing_any={:?}",
            any.intervals().collect::<Vec<_>>()
        ));
        let targets = self.slices[&slice].nodes();
        self.resend(env, slice, &all_ranges, &targets);
        let some = subtract(&any, &all);
        if !some.is_empty() {
            self.metrics.gossip_requests += 1;
            env.gossip(slice);
            self.slices.get_mut(&slice).expect("slice").partial = Some((some, 0));
        }
    }

    /// Ranges still missing on some replica after the accelerated gossip
    /// window are resent from the Log Stores to those replicas.
    fn escalate_partial<E: SalEnv>(&mut self, env: &mut E, slice: SliceId, ranges: Coverage) {
        let hi = ranges.max_through();
        for (node, m) in self.missing_by_replica(env, slice, hi) {
            let need: Vec<(Lsn, Lsn)> = m.intersect(&ranges).intervals().collect();
            if !need.is_empty() {
                self.resend(env, slice, &need, &[node]);
            }
        }
    }

    /// Periodic work: persistent-LSN polling, stall detection, database
    /// persistent LSN, truncation and recycle LSN.
    pub fn poll<E: SalEnv>(&mut self, env: &mut E) {
        let k = self.cfg.staleness_polls.max(1);
        let ids: Vec<SliceId> = self.slices.keys().copied().collect();
        for slice in ids {
            let ss = self.slices.get_mut(&slice).expect("listed");
            for n in ss.nodes() {
                env.send(&n, Message::Poll { slice });
            }
            let mut stalled = false;
            for slot in ss.slots.iter_mut() {
                if slot.persistent < ss.flush_lsn && slot.persistent == slot.last_polled {
                    slot.stale_polls += 1;
                } else {
                    slot.stale_polls = 0;
                }
                slot.last_polled = slot.persistent;
                stalled |= slot.stale_polls >= k;
            }
            let mut escalate = None;
            if let Some((ranges, waited)) = ss.partial.as_mut() {
                *waited += 1;
                if *waited >= k {
                    escalate = Some(ranges.clone());
                    ss.partial = None;
                }
            }
            if stalled {
                for slot in ss.slots.iter_mut() {
                    slot.stale_polls = 0;
                }
                if ss.partial.is_none() {
                    self.mechanism_b(env, slice);
                }
            }
            if let Some(r) = escalate {
                self.escalate_partial(env, slice, r);
            }
        }
        self.update_db_persistent();
        self.truncate(env);
        self.issue_recycle(env);
        let last = self.next_lsn.prev();
        self.send_master(env, Vec::new(), last);
    }

    pub fn update_db_persistent(&mut self) -> Lsn {
        let lagging: Vec<&SliceSal> = self.slices.values().filter(|s| s.lagging()).collect();
        let candidate = if lagging.is_empty() {
            self.slices
                .values()
                .map(|s| s.flush_lsn)
                .max()
                .unwrap_or(Lsn::NONE)
        } else {
            lagging
                .iter()
                .map(|s| s.min_persistent())
                .min()
                .unwrap_or(Lsn::NONE)
        };
        self.db_persistent = self.db_persistent.max(candidate);
        self.db_persistent
    }

    fn min_replica_report(&self, pick: impl Fn(&(Lsn, Lsn)) -> Lsn) -> Lsn {
        self.replicas
            .iter()
            .map(|r| self.replica_reports.get(r).map(&pick).unwrap_or(Lsn::NONE))
            .min()
            .unwrap_or(Lsn::MAX)
    }

    /// Deletes every data PLog whose records all lie below the database
    /// persistent LSN and below what every read replica has consumed.
    pub fn truncate<E: SalEnv>(&mut self, env: &mut E) -> usize {
        let bound = self.db_persistent.min(self.min_replica_report(|r| r.1));
        let reach = env.log_reachable();
        let mut deleted = Vec::new();
        for id in &self.chain {
            if Some(*id) == self.active {
                continue;
            }
            let Some(p) = env.logstores().plog(*id) else {
                deleted.push(*id);
                continue;
            };
            let doomed = match p.lsns {
                Some(r) => r.last < bound,
                None => p.state == PLogState::Sealed,
            };
            if !doomed {
                continue;
            }
            let last = p.lsns.map(|r| r.last).unwrap_or(Lsn::NONE);
            if env
                .logstores()
                .delete_plog(*id, &|n| reach.contains(n))
                .is_ok()
            {
                self.log_start = self.log_start.max(last);
                deleted.push(*id);
                env.trace(format!("sal truncate plog={id} last={last}"));
            }
        }
        if deleted.is_empty() {
            return 0;
        }
        self.chain.retain(|id| !deleted.contains(id));
        self.buffers.retain(|b| !deleted.contains(&b.extent.plog));
        self.metrics.truncated_plogs += deleted.len() as u64;
        self.write_metadata(env);
        deleted.len()
    }

    fn issue_recycle<E: SalEnv>(&mut self, env: &mut E) {
        let r = self
            .min_replica_report(|r| r.0)
            .min(self.cv)
            .min(self.db_persistent);
        for ss in self.slices.values_mut() {
            if r > ss.recycle_issued {
                ss.recycle_issued = r;
                for n in ss.nodes() {
                    env.send(
                        &n,
                        Message::SetRecycle {
                            slice: ss.slice,
                            lsn: r,
                        },
                    );
                }
            }
        }
    }

    /// Checkpoints the database persistent LSN to the metadata PLog.
    pub fn checkpoint<E: SalEnv>(&mut self, env: &mut E) {
        self.write_metadata(env);
    }

    fn read_order(&mut self, slice: SliceId) -> Vec<NodeId> {
        let nodes = self.slices[&slice].nodes();
        for n in &nodes {
            if !self.tiebreak.contains_key(n) {
                let k = self.rng.gen();
                self.tiebreak.insert(n.clone(), k);
            }
        }
        let mut keyed: Vec<(f64, u64, NodeId)> = nodes
            .into_iter()
            .map(|n| (*self.latency.get(&n).unwrap_or(&0.0), self.tiebreak[&n], n))
            .collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, n)| n).collect()
    }

    fn try_read<E: SalEnv>(
        &mut self,
        env: &mut E,
        slice: SliceId,
        page: PageId,
        lsn: Lsn,
    ) -> Option<PageImage> {
        for node in self.read_order(slice) {
            self.metrics.read_attempts += 1;
            let rtt = env.call_latency(&node) as f64;
            let Some(ps) = env.page_store(&node) else {
                let e = self.latency.entry(node).or_insert(0.0);
                *e += 1000.0;
                continue;
            };
            let res = ps.read_page(slice, page, lsn);
            let a = self.cfg.latency_ewma_alpha;
            let e = self.latency.entry(node.clone()).or_insert(rtt);
            *e = (1.0 - a) * *e + a * rtt;
            if let Ok(img) = res {
                return Some(img);
            }
        }
        None
    }

    /// Reads a page at `lsn` (default: the slice flush LSN) from the best
    /// replica, falling back to the others and finally to a repair from the
    /// Log Stores.
    pub fn read_page_routed<E: SalEnv>(
        &mut self,
        env: &mut E,
        page: PageId,
        lsn: Option<Lsn>,
    ) -> Result<(Lsn, PageImage), SalError> {
        let slice = self.slice_of(page);
        let Some(ss) = self.slices.get(&slice) else {
            return Err(SalError::SliceUnrecoverable(slice));
        };
        let lsn = lsn.unwrap_or(ss.flush_lsn);
        self.metrics.reads_routed += 1;
        if let Some(img) = self.try_read(env, slice, page, lsn) {
            return Ok((lsn, img));
        }
        self.repair_for_read(env, slice, lsn);
        self.try_read(env, slice, page, lsn)
            .map(|img| (lsn, img))
            .ok_or(SalError::SliceUnrecoverable(slice))
    }

    /// Delivers records missing below `lsn` straight to every reachable
    /// replica of the slice.
    fn repair_for_read<E: SalEnv>(&mut self, env: &mut E, slice: SliceId, lsn: Lsn) {
        self.metrics.read_repairs += 1;
        for n in self.slices[&slice].nodes() {
            let Some(ps) = env.page_store(&n) else {
                continue;
            };
            let Some(cov) = ps.coverage(slice) else {
                continue;
            };
            let lo = self.log_start;
            let need: Vec<(Lsn, Lsn)> = cov
                .missing_within(lo, lsn)
                .into_iter()
                .filter(|(a, t)| t > a)
                .collect();
            for (a, t) in need {
                let Ok(records) = self.log_records(env, slice, a, t) else {
                    continue;
                };
                self.metrics.resent_records += records.len() as u64;
                let frag = LogFragment {
                    slice,
                    sequence: 0,
                    records,
                    group_ends: BTreeSet::new(),
                    covers_after: a,
                    covers_through: t,
                };
                if let Some(ps) = env.page_store(&n) {
                    let _ = ps.write_logs(&frag);
                }
            }
        }
    }

    /// A dirty page may leave the front-end cache only once some replica of
    /// its slice holds all of its records.
    pub fn eviction_permitted(&self, page: PageId, last_record: Lsn, dirty: bool) -> bool {
        if !dirty {
            return true;
        }
        self.slices
            .get(&self.slice_of(page))
            .is_some_and(|s| last_record <= s.max_persistent())
    }

    /// Points a slot at a replacement node. The old persistent LSN is kept
    /// so that a lower report from the replacement is seen as a decrease.
    pub fn replace_slot(&mut self, slice: SliceId, old: &NodeId, new: &NodeId) {
        if let Some(ss) = self.slices.get_mut(&slice) {
            for s in ss.slots.iter_mut().filter(|s| &s.node == old) {
                s.node = new.clone();
                s.ready = false;
                s.stale_polls = 0;
            }
        }
    }

    /// State a read replica needs to (re)start following the log.
    pub fn snapshot(&self) -> ResyncSnapshot {
        let known: BTreeMap<SliceId, Lsn> = self
            .slices
            .values()
            .map(|s| (s.slice, s.max_persistent()))
            .collect();
        let ok = |b: &BufferInfo| {
            b.slice_last
                .iter()
                .all(|(s, l)| *l <= known.get(s).copied().unwrap_or(Lsn::NONE))
        };
        let idx = self
            .buffers
            .iter()
            .rposition(|b| b.extent.last <= self.cv && ok(b));
        let (boundary, slice_last, rest) = match idx {
            Some(i) => (
                self.buffers[i].extent.last,
                self.buffers[i].slice_last.clone(),
                &self.buffers[i + 1..],
            ),
            None => {
                // Everything retained is after the boundary, which then is
                // the truncation point.
                let b = self
                    .buffers
                    .first()
                    .map(|b| b.extent.first.prev())
                    .unwrap_or(self.next_lsn.prev());
                (b, BTreeMap::new(), &self.buffers[..])
            }
        };
        ResyncSnapshot {
            seq: self.master_seq,
            boundary,
            slice_persistent: known,
            slice_last,
            extents: rest.iter().map(|b| b.extent).collect(),
        }
    }

    /// Redo recovery for a restarted master: rebuilds the SAL from the
    /// metadata PLog, the data PLogs after the checkpoint and the replicas'
    /// persistent LSNs, resending only records no replica has.
    pub fn recover<E: SalEnv>(
        cfg: &Config,
        placement: &BTreeMap<SliceId, Vec<NodeId>>,
        replicas: Vec<NodeId>,
        seed: u64,
        env: &mut E,
    ) -> Result<Sal, SalError> {
        let mut sal = Sal::new(cfg, placement, replicas, seed);
        let reach = env.log_reachable();
        let md = match env.logstores().metadata_plog(cfg.db) {
            None => return Ok(sal),
            Some(_) => env
                .logstores()
                .read_latest_metadata(cfg.db, &|n| reach.contains(n))?,
        };
        sal.epoch = md.epoch;
        sal.db_persistent = md.db_persistent_lsn;
        sal.checkpointed = md.db_persistent_lsn;
        let checkpoint = md.db_persistent_lsn;
        sal.chain = md
            .chain
            .iter()
            .map(|e| e.plog)
            .filter(|id| env.logstores().plog(*id).is_some())
            .collect();
        // Records in PLogs deleted before the crash are below the checkpoint.
        sal.log_start = checkpoint.min(
            sal.chain
                .iter()
                .filter_map(|id| env.logstores().plog(*id).and_then(|p| p.lsns))
                .map(|r| r.first.prev())
                .min()
                .unwrap_or(checkpoint),
        );
        let mut end = checkpoint;
        let mut scanned: Vec<LogRecord> = Vec::new();
        for id in sal.chain.clone() {
            let p = env.logstores().plog(id).expect("filtered").clone();
            if p.state == PLogState::Open {
                env.logstores().seal(id)?;
            }
            let Some(r) = p.lsns else { continue };
            end = end.max(r.last);
            if r.last <= checkpoint {
                continue;
            }
            let recs = env
                .logstores()
                .read_records(id, ReadPurpose::Recovery, &|n| reach.contains(n))?;
            // Group boundaries inside a PLog are not recorded, so each
            // recovered PLog becomes one buffer for read replicas.
            for r in &recs {
                sal.slice_last.insert(r.slice, r.lsn);
            }
            sal.buffers.push(BufferInfo {
                extent: Extent {
                    plog: id,
                    offset: 0,
                    len: p.length as u32,
                    first: r.first,
                    last: r.last,
                },
                slice_last: sal.slice_last.clone(),
            });
            scanned.extend(recs.into_iter().filter(|r| r.lsn > checkpoint));
        }
        env.trace(format!(
            "sal recover checkpoint={checkpoint} end={end} scanned={}",
            scanned.len()
        ));
        let ids: Vec<SliceId> = sal.slices.keys().copied().collect();
        for slice in ids {
            let nodes = sal.slices[&slice].nodes();
            let mut all = Coverage::from_intervals([(checkpoint, end)]);
            let mut max_seq = 0;
            for n in &nodes {
                let Some(ps) = env.page_store(n) else {
                    continue;
                };
                let Ok(st) = ps.status(slice) else { continue };
                let cov = ps.coverage(slice).cloned().unwrap_or_default();
                let ss = sal.slices.get_mut(&slice).expect("slice");
                let slot = ss.slots.iter_mut().find(|s| &s.node == n).expect("slot");
                slot.persistent = st.persistent;
                slot.ready = st.ready;
                slot.last_seq = st.last_seq;
                max_seq = max_seq.max(st.last_seq);
                all = all.intersect(&Coverage::from_intervals(
                    cov.missing_within(checkpoint, end),
                ));
            }
            let ranges: Vec<(Lsn, Lsn)> = all.intervals().collect();
            for &(a, t) in &ranges {
                let records: Vec<LogRecord> = scanned
                    .iter()
                    .filter(|r| r.slice == slice && r.lsn > a && r.lsn <= t)
                    .cloned()
                    .collect();
                sal.metrics.resent_records += records.len() as u64;
                let frag = LogFragment {
                    slice,
                    sequence: 0,
                    records,
                    group_ends: BTreeSet::new(),
                    covers_after: a,
                    covers_through: t,
                };
                env.trace(format!(
                    "sal recover resend slice={slice} ({a},{t}] records={}",
                    frag.records.len()
                ));
                for n in &nodes {
                    env.send(n, Message::WriteLogs(frag.clone()));
                }
            }
            let ss = sal.slices.get_mut(&slice).expect("slice");
            ss.next_seq = max_seq + 1;
            ss.last_sent_through = end;
            ss.flush_lsn = end;
        }
        sal.next_lsn = end.next();
        sal.cv = end;
        sal.write_metadata(env);
        Ok(sal)
    }
}

/// `a` minus `b`.
fn subtract(a: &Coverage, b: &Coverage) -> Coverage {
    let mut out = Coverage::new();
    for (x, y) in a.intervals() {
        for (p, q) in b.missing_within(x, y) {
            out.insert(p, q);
        }
    }
    out
}

#[cfg(test)]
mod tests;
