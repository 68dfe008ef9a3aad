//! Deterministic discrete-event simulation of the storage layer: a logical
//! clock, a seeded scheduler, a lossy network with fault injection, the
//! cluster manager and the global auditors.

pub mod gen;
pub mod library;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::audit::{Auditor, Oracle};
use crate::config::Config;
use crate::disk::Disk;
use crate::logstore::{FailureClass, LogStoreCluster};
use crate::msg::Message;
use crate::pagestore::PageStoreNode;
use crate::record::{page_to_slice, LogRecord, Op};
use crate::replica::ReadReplica;
use crate::sal::{Sal, SalEnv, SalTimer};
use crate::types::{Lsn, NodeId, PageId, SliceId};

pub use scenario::{Action, Check, LsnSel, PageSel, Scenario, ScenarioParseError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Parse(#[from] ScenarioParseError),
    #[error("config: {0}")]
    Config(String),
    #[error("scenario names unknown node `{0}`")]
    UnknownNode(NodeId),
}

#[derive(Debug, Clone)]
enum Event {
    Script(usize),
    Deliver {
        from: NodeId,
        to: NodeId,
        msg: Message,
    },
    SalTimer {
        epoch: u64,
        timer: SalTimer,
    },
    Poll,
    Consolidate,
    DirtyFlush,
    GossipTick,
    ReplicaPump,
    Heartbeat,
    GossipRound(SliceId),
    RebuildCopy {
        slice: SliceId,
        target: NodeId,
        failed: NodeId,
    },
    Restart {
        node: NodeId,
        gen: u64,
    },
    MasterRecover,
    DeferredWrite(Vec<(PageId, Op)>),
}

#[derive(Debug, Default)]
struct Faults {
    /// Crashed nodes with the crash generation that will restart them.
    crashed: BTreeMap<NodeId, (u64, u64)>,
    hung: BTreeMap<NodeId, u64>,
    partitions: Vec<(NodeId, NodeId, u64)>,
    drop_next: BTreeMap<NodeId, u32>,
    decommissioned: BTreeSet<NodeId>,
    gen: u64,
}

impl Faults {
    fn crashed(&self, n: &NodeId) -> bool {
        self.crashed.contains_key(n)
    }

    fn hung_until(&self, n: &NodeId, now: u64) -> Option<u64> {
        self.hung.get(n).copied().filter(|u| *u > now)
    }

    fn partitioned(&self, a: &NodeId, b: &NodeId, now: u64) -> bool {
        self.partitions
            .iter()
            .any(|(x, y, u)| *u > now && ((x == a && y == b) || (x == b && y == a)))
    }

    fn down(&self, n: &NodeId, now: u64) -> bool {
        self.decommissioned.contains(n) || self.crashed(n) || self.hung_until(n, now).is_some()
    }

    fn reachable(&self, now: u64, from: &NodeId, to: &NodeId) -> bool {
        !self.down(to, now) && !self.down(from, now) && !self.partitioned(from, to, now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureClassification {
    pub node: NodeId,
    pub class: FailureClass,
    pub detected_at: u64,
    pub classified_at: u64,
}

/// One master redo recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recovery {
    pub at: u64,
    pub checkpoint: Lsn,
    pub end: Lsn,
    pub resent: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SimStats {
    pub events: u64,
    pub writes_ok: u64,
    pub writes_failed: u64,
    pub writes_deferred: u64,
    pub reads_ok: u64,
    pub reads_failed: u64,
    pub read_mismatches: u64,
    pub replica_reads_ok: u64,
    pub replica_reads_failed: u64,
    pub view_samples: u64,
    pub view_read_failures: u64,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub gossip_rounds: BTreeMap<SliceId, u64>,
    pub gossip_records: u64,
    pub replacements: u64,
    pub max_replica_lag_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub time_ms: u64,
    pub metric: &'static str,
    pub node: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub time: u64,
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub trace_hash: String,
    pub checks: Vec<CheckOutcome>,
    pub violations: Vec<String>,
    pub audits: u64,
    pub stats: SimStats,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Name of the first failed check or invariant.
    pub fn first_failure(&self) -> Option<String> {
        if let Some(c) = self.checks.iter().find(|c| !c.passed) {
            return Some(format!("CHECK {} at t={}: {}", c.check, c.time, c.detail));
        }
        self.violations.first().cloned()
    }
}

pub struct Sim {
    cfg: Config,
    seed: u64,
    now: u64,
    seq: u64,
    horizon: u64,
    queue: BTreeMap<(u64, u64), Event>,
    rng: ChaCha8Rng,
    master: NodeId,
    cm: NodeId,
    ls: LogStoreCluster,
    ps: BTreeMap<NodeId, PageStoreNode>,
    placement: BTreeMap<SliceId, Vec<NodeId>>,
    sal: Option<Sal>,
    master_epoch: u64,
    replicas: BTreeMap<NodeId, ReadReplica>,
    resync_asked: BTreeMap<NodeId, u64>,
    faults: Faults,
    links: BTreeMap<(NodeId, NodeId), u64>,
    script: Vec<(u64, Action)>,
    group: Option<Vec<(PageId, Op)>>,
    oracle: Oracle,
    auditor: Auditor,
    trace: Vec<String>,
    metrics: Vec<MetricRow>,
    checks: Vec<CheckOutcome>,
    last_seen: BTreeMap<NodeId, u64>,
    classified: BTreeMap<NodeId, FailureClassification>,
    classifications: Vec<FailureClassification>,
    rebuilding: BTreeMap<NodeId, usize>,
    retired_overwrites: u64,
    retired_disk_reads: u64,
    recoveries: Vec<Recovery>,
    cv_seen: Lsn,
    invariant_violations: Vec<String>,
    stats: SimStats,
}

impl Sim {
    /// Builds the cluster: slice `i` is placed on Page Stores `i, i+1, i+2`
    /// (mod the Page Store count).
    pub fn new(cfg: Config, seed: u64) -> Result<Sim, SimError> {
        if cfg.page_stores < cfg.replication || cfg.replication < 2 {
            return Err(SimError::Config(format!(
                "{} page stores cannot host {} replicas",
                cfg.page_stores, cfg.replication
            )));
        }
        if cfg.log_stores < 3 {
            return Err(SimError::Config(
                "at least 3 log stores are required".into(),
            ));
        }
        let ls = LogStoreCluster::new(&cfg, seed);
        let mut ps: BTreeMap<NodeId, PageStoreNode> = (0..cfg.page_stores)
            .map(|i| {
                let id = NodeId::page_store(i);
                (id.clone(), PageStoreNode::new(id, &cfg, Disk::in_memory()))
            })
            .collect();
        let mut placement = BTreeMap::new();
        for i in 0..cfg.slices {
            let slice = SliceId::new(cfg.db, i);
            let nodes: Vec<NodeId> = (0..cfg.replication)
                .map(|k| NodeId::page_store((i as usize + k) % cfg.page_stores))
                .collect();
            for n in &nodes {
                ps.get_mut(n)
                    .expect("placed on existing node")
                    .host_slice(slice);
            }
            placement.insert(slice, nodes);
        }
        let replica_ids: Vec<NodeId> = (0..cfg.read_replicas).map(NodeId::read_replica).collect();
        let replicas = replica_ids
            .iter()
            .map(|r| (r.clone(), ReadReplica::new(r.clone(), &cfg)))
            .collect();
        let sal = Sal::new(&cfg, &placement, replica_ids, seed);
        let mut sim = Sim {
            oracle: Oracle::new(cfg.page_size),
            seed,
            now: 0,
            seq: 0,
            horizon: 0,
            queue: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            master: NodeId::master(),
            cm: NodeId::cluster_manager(),
            ls,
            ps,
            placement,
            sal: Some(sal),
            master_epoch: 0,
            replicas,
            resync_asked: BTreeMap::new(),
            faults: Faults::default(),
            links: BTreeMap::new(),
            script: Vec::new(),
            group: None,
            auditor: Auditor::default(),
            trace: Vec::new(),
            metrics: Vec::new(),
            checks: Vec::new(),
            last_seen: BTreeMap::new(),
            classified: BTreeMap::new(),
            classifications: Vec::new(),
            rebuilding: BTreeMap::new(),
            retired_overwrites: 0,
            retired_disk_reads: 0,
            recoveries: Vec::new(),
            cv_seen: Lsn::NONE,
            invariant_violations: Vec::new(),
            stats: SimStats::default(),
            cfg,
        };
        sim.push(sim.cfg.poll_interval_ms, Event::Poll);
        sim.push(sim.cfg.consolidate_interval_ms, Event::Consolidate);
        sim.push(sim.cfg.flush_interval_ms, Event::DirtyFlush);
        sim.push(sim.cfg.gossip_interval_ms, Event::GossipTick);
        sim.push(sim.cfg.heartbeat_ms, Event::Heartbeat);
        if !sim.replicas.is_empty() {
            sim.push(sim.cfg.replica_pump_ms, Event::ReplicaPump);
        }
        Ok(sim)
    }

    /// Test-profile config overridden by the scenario's `CONFIG` lines, and
    /// the scenario's events scheduled.
    pub fn from_scenario(sc: &Scenario, seed: u64) -> Result<Sim, SimError> {
        let mut cfg = Config::test();
        for (k, v) in &sc.config {
            cfg.set(k, v).map_err(SimError::Config)?;
        }
        Self::with_config(cfg, sc, seed)
    }

    pub fn with_config(cfg: Config, sc: &Scenario, seed: u64) -> Result<Sim, SimError> {
        let mut sim = Sim::new(cfg, seed)?;
        for (_, a) in &sc.events {
            let named: Vec<&NodeId> = match a {
                Action::Crash { node, .. }
                | Action::Hang { node, .. }
                | Action::Drop { node, .. } => {
                    vec![node]
                }
                Action::Partition { a, b, .. } => vec![a, b],
                Action::Read {
                    replica: Some(r), ..
                } => vec![r],
                Action::ViewCheck { replica, .. } => vec![replica],
                _ => vec![],
            };
            for n in named {
                if !sim.node_exists(n) {
                    return Err(SimError::UnknownNode(n.clone()));
                }
            }
        }
        sim.script = sc.events.clone();
        for (i, (t, _)) in sc.events.iter().enumerate() {
            sim.push_at(*t, Event::Script(i));
        }
        Ok(sim)
    }

    fn node_exists(&self, n: &NodeId) -> bool {
        *n == self.master
            || *n == self.cm
            || self.ps.contains_key(n)
            || self.ls.node(n).is_some()
            || self.replicas.contains_key(n)
    }

    /// Parses and runs a scenario to its last scripted event.
    pub fn run_scenario(text: &str, seed: u64) -> Result<(Sim, RunReport), SimError> {
        let sc = Scenario::parse(text)?;
        let mut sim = Sim::from_scenario(&sc, seed)?;
        sim.run_until(sc.end_time());
        let report = sim.report();
        Ok((sim, report))
    }

    // ---- scheduler ----

    fn push(&mut self, delay: u64, ev: Event) {
        self.push_at(self.now + delay, ev);
    }

    fn push_at(&mut self, at: u64, ev: Event) {
        self.queue.insert((at.max(self.now), self.seq), ev);
        self.seq += 1;
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// Executes every event scheduled at or before `t`.
    pub fn run_until(&mut self, t: u64) {
        self.horizon = self.horizon.max(t);
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > t {
                break;
            }
            let ((time, _), ev) = entry.remove_entry();
            self.now = time;
            self.handle(ev);
            self.stats.events += 1;
            self.after_event();
        }
        self.now = self.now.max(t);
    }

    fn after_event(&mut self) {
        if let Some(cv) = self.sal.as_ref().map(|s| s.cv) {
            if cv < self.cv_seen {
                let v = format!("t={} cv went back from {} to {cv}", self.now, self.cv_seen);
                self.violation(v);
            }
            self.cv_seen = self.cv_seen.max(cv);
        }
        let every = self.cfg.audit_every_events;
        if every > 0 && self.stats.events.is_multiple_of(every) {
            self.audit();
        }
    }

    fn violation(&mut self, v: String) {
        self.trace_line(format!("VIOLATION {v}"));
        if self.invariant_violations.len() < 100 {
            self.invariant_violations.push(v);
        }
    }

    fn trace_line(&mut self, line: String) {
        self.trace.push(format!("{} {}", self.now, line));
    }

    fn metric(&mut self, metric: &'static str, node: &str, value: f64) {
        self.metrics.push(MetricRow {
            time_ms: self.now,
            metric,
            node: node.to_string(),
            value,
        });
    }

    fn audit(&mut self) {
        self.auditor
            .audit(self.now, &self.oracle, &self.ls, &self.ps);
    }

    // ---- network ----

    fn send_msg(&mut self, from: &NodeId, to: &NodeId, msg: Message) {
        self.stats.messages_sent += 1;
        let f = &self.faults;
        if f.decommissioned.contains(to)
            || f.crashed(to)
            || f.crashed(from)
            || f.partitioned(from, to, self.now)
        {
            self.stats.messages_dropped += 1;
            return;
        }
        if let Some(n) = self.faults.drop_next.get_mut(to) {
            if *n > 0 {
                *n -= 1;
                self.stats.messages_dropped += 1;
                return;
            }
        }
        let jitter = if self.cfg.jitter_ms > 0 {
            self.rng.gen_range(0..=self.cfg.jitter_ms)
        } else {
            0
        };
        let mut at = self.now + self.cfg.latency_ms + jitter;
        if let Some(h) = self.faults.hung_until(to, self.now) {
            at = at.max(h);
        }
        let link = self.links.entry((from.clone(), to.clone())).or_insert(0);
        at = at.max(*link);
        *link = at;
        self.push_at(
            at,
            Event::Deliver {
                from: from.clone(),
                to: to.clone(),
                msg,
            },
        );
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let f = &self.faults;
        if f.decommissioned.contains(&to) || f.crashed(&to) || f.partitioned(&from, &to, self.now) {
            self.stats.messages_dropped += 1;
            return;
        }
        if let Some(h) = self.faults.hung_until(&to, self.now) {
            self.push_at(h, Event::Deliver { from, to, msg });
            return;
        }
        if to == self.master {
            self.master_receive(from, msg);
        } else if to.is_page_store() {
            self.page_store_receive(from, to, msg);
        } else if to.is_read_replica() {
            self.replica_receive(to, msg);
        }
    }

    fn master_receive(&mut self, from: NodeId, msg: Message) {
        match msg {
            Message::WriteAck(a) => {
                self.with_sal(|s, sim| s.on_ack(sim, &from, &a));
            }
            Message::PollReply { slice, status } => {
                self.with_sal(|s, sim| s.on_poll_reply(sim, &from, slice, &status));
            }
            Message::ResyncRequest => {
                if let Some(snap) = self.sal.as_ref().map(|s| s.snapshot()) {
                    let m = self.master.clone();
                    self.send_msg(&m, &from, Message::Snapshot(snap));
                }
            }
            Message::MinTv { tv, visible } => {
                if let Some(s) = self.sal.as_mut() {
                    s.on_min_tv(&from, tv, visible);
                }
            }
            _ => {}
        }
    }

    fn page_store_receive(&mut self, from: NodeId, to: NodeId, msg: Message) {
        let Some(ps) = self.ps.get_mut(&to) else {
            return;
        };
        match msg {
            Message::WriteLogs(f) => match ps.write_logs(&f) {
                Ok(ack) => self.send_msg(&to, &from, Message::WriteAck(ack)),
                Err(e) => self.trace_line(format!("{to} rejected fragment: {e}")),
            },
            Message::SetRecycle { slice, lsn } => {
                if let Err(e) = ps.set_recycle_lsn(slice, lsn) {
                    self.trace_line(format!("{to} set recycle: {e}"));
                }
                self.audit();
            }
            Message::Poll { slice } => {
                if let Ok(status) = ps.status(slice) {
                    self.send_msg(&to, &from, Message::PollReply { slice, status });
                }
            }
            _ => {}
        }
    }

    fn replica_receive(&mut self, to: NodeId, msg: Message) {
        let Some(r) = self.replicas.get_mut(&to) else {
            return;
        };
        let reply = match msg {
            Message::Master(bytes) => r.on_master(&bytes),
            Message::Snapshot(s) => {
                r.on_snapshot(&s);
                None
            }
            _ => None,
        };
        if let Some(m) = reply {
            let master = self.master.clone();
            self.send_msg(&to, &master, m);
        }
    }

    fn with_sal<R>(&mut self, f: impl FnOnce(&mut Sal, &mut Sim) -> R) -> Option<R> {
        let mut sal = self.sal.take()?;
        let r = f(&mut sal, self);
        self.sal = Some(sal);
        Some(r)
    }

    fn master_up(&self) -> bool {
        self.sal.is_some()
            && !self.faults.crashed(&self.master)
            && self.faults.hung_until(&self.master, self.now).is_none()
    }

    // ---- events ----

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Script(i) => {
                let a = self.script[i].1.clone();
                self.script_action(a);
            }
            Event::Deliver { from, to, msg } => self.deliver(from, to, msg),
            Event::SalTimer { epoch, timer } => {
                if epoch != self.master_epoch || self.sal.is_none() {
                    return;
                }
                if let Some(h) = self.faults.hung_until(&self.master, self.now) {
                    self.push_at(h, Event::SalTimer { epoch, timer });
                    return;
                }
                self.with_sal(|s, sim| s.on_timer(sim, timer));
            }
            Event::Poll => {
                self.push(self.cfg.poll_interval_ms, Event::Poll);
                if self.master_up() {
                    self.with_sal(|s, sim| s.poll(sim));
                    self.audit();
                }
                self.sample_metrics();
            }
            Event::Consolidate => {
                self.push(self.cfg.consolidate_interval_ms, Event::Consolidate);
                let now = self.now;
                for (id, ps) in self.ps.iter_mut() {
                    if !self.faults.down(id, now) {
                        ps.consolidate_step();
                    }
                }
            }
            Event::DirtyFlush => {
                self.push(self.cfg.flush_interval_ms, Event::DirtyFlush);
                let now = self.now;
                for (id, ps) in self.ps.iter_mut() {
                    if !self.faults.down(id, now) {
                        ps.flush_dirty_pages();
                    }
                }
            }
            Event::GossipTick => {
                self.push(self.cfg.gossip_interval_ms, Event::GossipTick);
                let slices: Vec<SliceId> = self.placement.keys().copied().collect();
                for s in slices {
                    self.gossip_round(s);
                }
            }
            Event::GossipRound(s) => {
                self.gossip_round(s);
            }
            Event::ReplicaPump => {
                self.push(self.cfg.replica_pump_ms, Event::ReplicaPump);
                self.pump_replicas();
            }
            Event::Heartbeat => {
                self.push(self.cfg.heartbeat_ms, Event::Heartbeat);
                self.heartbeat();
            }
            Event::RebuildCopy {
                slice,
                target,
                failed,
            } => self.rebuild_copy(slice, target, failed),
            Event::Restart { node, gen } => {
                if self.faults.crashed.get(&node).map(|(_, g)| *g) == Some(gen) {
                    self.faults.crashed.remove(&node);
                    self.restart(&node);
                }
            }
            Event::MasterRecover => self.master_recover(),
            Event::DeferredWrite(ops) => self.do_write(ops),
        }
    }

    fn sample_metrics(&mut self) {
        if let Some(s) = &self.sal {
            let (cv, dbp) = (s.cv.0 as f64, s.db_persistent.0 as f64);
            self.metric("cv_lsn", "master", cv);
            self.metric("db_persistent_lsn", "master", dbp);
        }
        let rows: Vec<(String, [f64; 4])> = self
            .ps
            .iter()
            .map(|(id, p)| {
                (
                    id.to_string(),
                    [
                        p.metrics.disk_record_reads as f64,
                        p.metrics.fragments_received as f64,
                        p.metrics.pages_consolidated as f64,
                        p.metrics.gossip_records_received as f64,
                    ],
                )
            })
            .collect();
        for (id, v) in rows {
            self.metric("disk_record_reads", &id, v[0]);
            self.metric("fragments_received", &id, v[1]);
            self.metric("pages_consolidated", &id, v[2]);
            self.metric("gossip_records_received", &id, v[3]);
        }
    }

    fn script_action(&mut self, a: Action) {
        match a {
            Action::Write { page, len } => {
                let page = self.pick_page(page);
                let op = self.make_op(len);
                match self.group.as_mut() {
                    Some(g) => g.push((page, op)),
                    None => self.do_write(vec![(page, op)]),
                }
            }
            Action::BeginGroup => {
                if self.group.is_none() {
                    self.group = Some(Vec::new());
                }
            }
            Action::EndGroup => {
                if let Some(g) = self.group.take() {
                    if !g.is_empty() {
                        self.do_write(g);
                    }
                }
            }
            Action::GroupWrite { pages, len } => {
                let len = len.clamp(1, self.cfg.page_size);
                let mut bytes = vec![0u8; len];
                self.rng.fill_bytes(&mut bytes);
                let ops = pages
                    .iter()
                    .map(|p| {
                        let op = if len == self.cfg.page_size {
                            Op::FullImage(bytes.clone())
                        } else {
                            Op::Delta {
                                offset: 0,
                                bytes: bytes.clone(),
                            }
                        };
                        (PageId(*p), op)
                    })
                    .collect();
                self.do_write(ops);
            }
            Action::Crash { node, dur } => self.crash(node, dur),
            Action::Hang { node, dur } => {
                self.trace_line(format!("fault hang {node} for {dur}"));
                let u = self.faults.hung.entry(node).or_insert(0);
                *u = (*u).max(self.now + dur);
            }
            Action::Partition { a, b, dur } => {
                self.trace_line(format!("fault partition {a} {b} for {dur}"));
                self.faults.partitions.push((a, b, self.now + dur));
            }
            Action::Drop { node, n } => {
                self.trace_line(format!("fault drop {node} next {n}"));
                *self.faults.drop_next.entry(node).or_insert(0) += n;
            }
            Action::Heal => self.heal(),
            Action::Read { page, replica, lsn } => {
                let page = self.pick_page(page);
                match replica {
                    None => self.master_read(page, lsn),
                    Some(r) => self.replica_read(&r, page, lsn),
                }
            }
            Action::ViewCheck {
                replica,
                pages,
                samples,
            } => self.view_check(&replica, &pages, samples),
            Action::Truncate => {
                if self.master_up() {
                    let n = self.with_sal(|s, sim| {
                        s.update_db_persistent();
                        s.truncate(sim)
                    });
                    self.trace_line(format!("truncate deleted {} plogs", n.unwrap_or(0)));
                    self.audit();
                }
            }
            Action::Gossip { slice } => {
                self.gossip_round(SliceId::new(self.cfg.db, slice));
            }
            Action::Check(c) => self.run_check(c),
        }
    }

    fn pick_page(&mut self, sel: PageSel) -> PageId {
        match sel {
            PageSel::Fixed(p) => PageId(p),
            PageSel::Random => PageId(self.rng.gen_range(0..self.cfg.pages())),
        }
    }

    fn make_op(&mut self, len: usize) -> Op {
        let size = self.cfg.page_size;
        let len = len.clamp(1, size);
        let mut bytes = vec![0u8; len];
        self.rng.fill_bytes(&mut bytes);
        if len == size {
            Op::FullImage(bytes)
        } else {
            let offset = self.rng.gen_range(0..=size - len) as u32;
            Op::Delta { offset, bytes }
        }
    }

    fn do_write(&mut self, ops: Vec<(PageId, Op)>) {
        if self.sal.is_none() || self.faults.crashed(&self.master) {
            self.stats.writes_failed += 1;
            self.trace_line("write failed: master down".into());
            return;
        }
        if let Some(h) = self.faults.hung_until(&self.master, self.now) {
            self.stats.writes_deferred += 1;
            self.push_at(h, Event::DeferredWrite(ops));
            return;
        }
        if self.sal.as_ref().is_some_and(|s| s.throttled(self.now)) {
            self.stats.writes_deferred += 1;
            self.push(self.cfg.throttle_delay_ms, Event::DeferredWrite(ops));
            return;
        }
        let kept = ops.clone();
        match self.with_sal(|s, sim| s.write_group(sim, ops)) {
            Some(Ok(last)) => {
                let first = last.0 + 1 - kept.len() as u64;
                let records: Vec<LogRecord> = kept
                    .into_iter()
                    .enumerate()
                    .map(|(i, (page, op))| LogRecord {
                        slice: page_to_slice(page, self.cfg.pages_per_slice, self.cfg.db),
                        page,
                        lsn: Lsn(first + i as u64),
                        op,
                    })
                    .collect();
                self.oracle.commit(&records, self.now);
                self.stats.writes_ok += 1;
            }
            Some(Err(e)) => {
                self.stats.writes_failed += 1;
                self.trace_line(format!("write failed: {e}"));
            }
            None => self.stats.writes_failed += 1,
        }
    }

    fn master_read(&mut self, page: PageId, sel: LsnSel) {
        if !self.master_up() {
            self.stats.reads_failed += 1;
            return;
        }
        let slice = page_to_slice(page, self.cfg.pages_per_slice, self.cfg.db);
        let lsn = match sel {
            LsnSel::Latest => None,
            LsnSel::Fixed(l) => Some(l),
            LsnSel::Random => {
                let ss = self.sal.as_ref().and_then(|s| s.slice(slice));
                let (lo, hi) = ss
                    .map(|s| (s.recycle_issued.0, s.flush_lsn.0))
                    .unwrap_or((0, 0));
                Some(Lsn(self.rng.gen_range(lo..=hi.max(lo))))
            }
        };
        match self.with_sal(|s, sim| s.read_page_routed(sim, page, lsn)) {
            Some(Ok((at, img))) => {
                if img.bytes == self.oracle.page_at(page, at) {
                    self.stats.reads_ok += 1;
                } else {
                    self.stats.read_mismatches += 1;
                    self.violation(format!(
                        "t={} master read of page {} at {at} differs from oracle",
                        self.now, page.0
                    ));
                }
            }
            _ => self.stats.reads_failed += 1,
        }
    }

    /// Synchronous read on a replica at `tv`; `None` on any failure.
    fn replica_fetch(&mut self, rid: &NodeId, page: PageId, tv: Lsn) -> Option<Vec<u8>> {
        let slice = page_to_slice(page, self.cfg.pages_per_slice, self.cfg.db);
        let slots = self.placement.get(&slice).cloned().unwrap_or_default();
        let Sim {
            replicas,
            ps,
            faults,
            now,
            ..
        } = self;
        let r = replicas.get_mut(rid)?;
        let now = *now;
        let mut fetch = |n: &NodeId, s: SliceId, p: PageId, l: Lsn| {
            if !faults.reachable(now, rid, n) {
                return None;
            }
            ps.get_mut(n)?.read_page(s, p, l).ok()
        };
        r.read_page(page, tv, &slots, &mut fetch)
            .ok()
            .map(|img| img.bytes)
    }

    fn replica_read(&mut self, rid: &NodeId, page: PageId, sel: LsnSel) {
        if self.faults.crashed(rid) {
            self.stats.replica_reads_failed += 1;
            return;
        }
        let Some(r) = self.replicas.get(rid) else {
            return;
        };
        let (lo, vis) = (r.low_water(), r.visible);
        let tv = match sel {
            LsnSel::Latest => vis,
            LsnSel::Fixed(l) => l,
            LsnSel::Random => Lsn(self.rng.gen_range(lo.0..=vis.0.max(lo.0))),
        };
        match self.replica_fetch(rid, page, tv) {
            Some(bytes) => {
                if bytes == self.oracle.page_at(page, tv) {
                    self.stats.replica_reads_ok += 1;
                } else {
                    self.stats.read_mismatches += 1;
                    self.violation(format!(
                        "t={} {rid} read of page {} at view {tv} differs from oracle",
                        self.now, page.0
                    ));
                }
            }
            None => self.stats.replica_reads_failed += 1,
        }
    }

    /// Samples read views on a replica and checks that the listed pages
    /// (written only together, by group writes) are identical and equal
    /// the oracle in every view.
    fn view_check(&mut self, rid: &NodeId, pages: &[u64], samples: u32) {
        for _ in 0..samples {
            self.stats.view_samples += 1;
            let Some(r) = self.replicas.get_mut(rid) else {
                return;
            };
            if !r.is_synced() || self.faults.crashed(rid) {
                self.stats.view_read_failures += 1;
                continue;
            }
            let pinned = r.open_view();
            let bounds = self.oracle.boundaries(r.low_water(), pinned);
            let tv = bounds.choose(&mut self.rng).copied().unwrap_or(pinned);
            let mut seen: Vec<Vec<u8>> = Vec::new();
            let mut failed = false;
            for p in pages {
                match self.replica_fetch(rid, PageId(*p), tv) {
                    Some(b) => {
                        if b != self.oracle.page_at(PageId(*p), tv) {
                            self.violation(format!(
                                "t={} {rid} view {tv} page {p} differs from oracle",
                                self.now
                            ));
                        }
                        seen.push(b);
                    }
                    None => failed = true,
                }
            }
            if let Some(r) = self.replicas.get_mut(rid) {
                r.close_view(pinned);
            }
            if failed {
                self.stats.view_read_failures += 1;
            } else if seen.windows(2).any(|w| w[0] != w[1]) {
                self.violation(format!(
                    "t={} {rid} view {tv} observed a group half applied",
                    self.now
                ));
            }
        }
    }

    fn pump_replicas(&mut self) {
        let ids: Vec<NodeId> = self.replicas.keys().cloned().collect();
        for id in ids {
            if self.faults.down(&id, self.now) {
                continue;
            }
            let Sim {
                replicas,
                ls,
                faults,
                now,
                ..
            } = self;
            let now = *now;
            let r = replicas.get_mut(&id).expect("listed");
            let before = r.visible;
            let mut out = r.pump(ls, &|n| faults.reachable(now, &id, n));
            let (synced, visible) = (r.is_synced(), r.visible);
            if !synced {
                let asked = self.resync_asked.get(&id).copied().unwrap_or(0);
                if out.is_empty() && now >= asked + 10 * self.cfg.poll_interval_ms.max(1) {
                    let r = self.replicas.get_mut(&id).expect("listed");
                    out.extend(r.resync());
                }
                if !out.is_empty() {
                    self.resync_asked.insert(id.clone(), now);
                }
            }
            let master = self.master.clone();
            for m in out {
                self.send_msg(&id, &master, m);
            }
            if synced {
                self.check_replica(&id, visible);
                if visible > before {
                    if let Some(t) = self.oracle.commit_time(visible) {
                        let lag = now.saturating_sub(t);
                        self.stats.max_replica_lag_ms = self.stats.max_replica_lag_ms.max(lag);
                        self.metric("replica_lag_ms", id.as_str(), lag as f64);
                    }
                }
            }
        }
    }

    fn check_replica(&mut self, id: &NodeId, visible: Lsn) {
        if !self.oracle.is_group_boundary(visible) {
            self.violation(format!(
                "t={} {id} visible {visible} is not a group boundary",
                self.now
            ));
        }
        let slices: Vec<SliceId> = self.placement.keys().copied().collect();
        for s in slices {
            let x = self.replicas[id].slice_lsn_at(s, visible);
            if x.is_none() {
                continue;
            }
            let best = self
                .ps
                .values()
                .filter_map(|p| p.persistent_lsn(s).ok())
                .max()
                .unwrap_or(Lsn::NONE);
            if x > best {
                self.violation(format!(
                    "t={} {id} visible {visible} needs {x} of slice {s} beyond persistent {best}",
                    self.now
                ));
            }
        }
    }

    // ---- faults ----

    fn crash(&mut self, node: NodeId, dur: u64) {
        if self.faults.decommissioned.contains(&node) {
            return;
        }
        self.trace_line(format!("fault crash {node} for {dur}"));
        self.faults.gen += 1;
        let gen = self.faults.gen;
        let until = self.now + dur;
        let was_down = self.faults.crashed(&node);
        let e = self
            .faults
            .crashed
            .entry(node.clone())
            .or_insert((until, gen));
        e.0 = e.0.max(until);
        e.1 = gen;
        let at = e.0;
        self.push_at(
            at,
            Event::Restart {
                node: node.clone(),
                gen,
            },
        );
        if was_down {
            return;
        }
        if node == self.master {
            self.sal = None;
            self.group = None;
            self.master_epoch += 1;
        } else if let Some(ps) = self.ps.get_mut(&node) {
            ps.crash();
        } else if node.is_log_store() {
            self.ls.crash_node(&node);
        } else if let Some(r) = self.replicas.get_mut(&node) {
            r.crash();
        }
    }

    fn restart(&mut self, node: &NodeId) {
        self.trace_line(format!("restart {node}"));
        if *node == self.master {
            self.push(0, Event::MasterRecover);
        } else if node.is_log_store() {
            self.ls.restart_node(node);
        } else if let Some(r) = self.replicas.get_mut(node) {
            if let Some(m) = r.request_resync() {
                let master = self.master.clone();
                self.send_msg(node, &master, m);
                self.resync_asked.insert(node.clone(), self.now);
            }
        }
    }

    /// Ends every fault window now.
    pub fn heal(&mut self) {
        self.trace_line("fault heal".into());
        let crashed: Vec<NodeId> = self.faults.crashed.keys().cloned().collect();
        self.faults.crashed.clear();
        self.faults.hung.clear();
        self.faults.partitions.clear();
        self.faults.drop_next.clear();
        for n in crashed {
            self.restart(&n);
        }
    }

    fn master_recover(&mut self) {
        if self.sal.is_some() || self.faults.down(&self.master, self.now) {
            return;
        }
        let replicas: Vec<NodeId> = self.replicas.keys().cloned().collect();
        let (cfg, placement) = (self.cfg.clone(), self.placement.clone());
        let seed = self.seed ^ self.master_epoch;
        match Sal::recover(&cfg, &placement, replicas, seed, self) {
            Ok(sal) => {
                let rec = Recovery {
                    at: self.now,
                    checkpoint: sal.checkpointed(),
                    end: sal.next_lsn().prev(),
                    resent: sal.metrics.resent_records,
                };
                self.trace_line(format!(
                    "master recovered checkpoint={} end={} resent={}",
                    rec.checkpoint, rec.end, rec.resent
                ));
                self.recoveries.push(rec);
                self.sal = Some(sal);
                let ids: Vec<NodeId> = self.replicas.keys().cloned().collect();
                let master = self.master.clone();
                for id in ids {
                    if let Some(m) = self.replicas.get_mut(&id).and_then(|r| r.resync()) {
                        self.resync_asked.insert(id.clone(), self.now);
                        self.send_msg(&id, &master, m);
                    }
                }
                self.audit();
            }
            Err(e) => {
                self.trace_line(format!("master recovery failed: {e}"));
                self.push(100, Event::MasterRecover);
            }
        }
    }

    // ---- cluster manager ----

    fn heartbeat(&mut self) {
        let mut nodes: Vec<NodeId> = self.ls.node_ids();
        nodes.extend(self.ps.keys().cloned());
        let detect = self.cfg.heartbeat_ms * self.cfg.heartbeat_misses as u64;
        let mut acted = false;
        for n in nodes {
            if self.faults.decommissioned.contains(&n) {
                continue;
            }
            if self.faults.reachable(self.now, &self.cm, &n) {
                self.last_seen.insert(n.clone(), self.now);
                if self.classified.remove(&n).is_some() {
                    self.trace_line(format!("cm {n} healthy"));
                    self.ls.mark_healthy(&n);
                }
                continue;
            }
            let seen = self.last_seen.get(&n).copied().unwrap_or(0);
            let down_for = self.now.saturating_sub(seen);
            match self.classified.get(&n).map(|c| c.class) {
                None if down_for >= detect => {
                    let c = FailureClassification {
                        node: n.clone(),
                        class: FailureClass::ShortTerm,
                        detected_at: self.now,
                        classified_at: self.now,
                    };
                    self.trace_line(format!("cm {n} short-term failure"));
                    self.classifications.push(c.clone());
                    self.classified.insert(n.clone(), c);
                    self.ls.mark_suspect(&n);
                }
                Some(FailureClass::ShortTerm) if down_for >= self.cfg.long_term_threshold_ms => {
                    let c = self.classified.get_mut(&n).expect("classified");
                    c.class = FailureClass::LongTerm;
                    c.classified_at = self.now;
                    let c = c.clone();
                    self.classifications.push(c);
                    self.trace_line(format!("cm {n} long-term failure"));
                    self.long_term(&n);
                    acted = true;
                }
                Some(FailureClass::LongTerm)
                    if n.is_page_store()
                    // Slices left on the node when no candidate was free.
                    && self.placement.values().any(|v| v.contains(&n)) =>
                {
                    self.replace_pagestore(&n);
                    acted = true;
                }
                _ => {}
            }
        }
        if acted {
            self.audit();
        }
    }

    pub fn classifications(&self) -> &[FailureClassification] {
        &self.classifications
    }

    fn long_term(&mut self, n: &NodeId) {
        if n.is_log_store() {
            let (faults, now, cm) = (&self.faults, self.now, &self.cm);
            match self
                .ls
                .recover_node(n, FailureClass::LongTerm, &|x| faults.reachable(now, cm, x))
            {
                Ok(k) => self.trace_line(format!("cm {n} retired, {k} plog replicas recreated")),
                Err(e) => self.trace_line(format!("cm {n} log store recovery failed: {e}")),
            }
            self.faults.decommissioned.insert(n.clone());
        } else if n.is_page_store() {
            self.replace_pagestore(n);
        }
    }

    fn replace_pagestore(&mut self, failed: &NodeId) {
        let slices: Vec<SliceId> = self
            .placement
            .iter()
            .filter(|(_, v)| v.contains(failed))
            .map(|(s, _)| *s)
            .collect();
        if slices.is_empty() && self.rebuilding.get(failed).copied().unwrap_or(0) == 0 {
            self.decommission(failed);
            return;
        }
        for slice in slices {
            let Some(target) = self.pick_target(slice) else {
                self.trace_line(format!("cm no candidate node for slice {slice}"));
                continue;
            };
            self.ps
                .get_mut(&target)
                .expect("candidate exists")
                .assign_replacement(slice);
            for slot in self.placement.get_mut(&slice).expect("slice").iter_mut() {
                if slot == failed {
                    *slot = target.clone();
                }
            }
            if let Some(s) = self.sal.as_mut() {
                s.replace_slot(slice, failed, &target);
            }
            *self.rebuilding.entry(failed.clone()).or_insert(0) += 1;
            self.stats.replacements += 1;
            self.trace_line(format!("cm slice {slice} moves {failed} -> {target}"));
            self.push(
                self.cfg.rebuild_copy_ms,
                Event::RebuildCopy {
                    slice,
                    target,
                    failed: failed.clone(),
                },
            );
        }
    }

    /// Least-loaded live Page Store not already hosting the slice.
    fn pick_target(&mut self, slice: SliceId) -> Option<NodeId> {
        let hosting = &self.placement[&slice];
        let mut load: BTreeMap<&NodeId, usize> = BTreeMap::new();
        for v in self.placement.values() {
            for n in v {
                *load.entry(n).or_insert(0) += 1;
            }
        }
        let mut cands: Vec<(usize, NodeId)> = self
            .ps
            .keys()
            .filter(|n| {
                !hosting.contains(n)
                    && !self.classified.contains_key(*n)
                    && self.faults.reachable(self.now, &self.cm, n)
            })
            .map(|n| (load.get(n).copied().unwrap_or(0), n.clone()))
            .collect();
        cands.shuffle(&mut self.rng);
        cands.sort_by_key(|c| c.0);
        cands.into_iter().next().map(|(_, n)| n)
    }

    fn rebuild_copy(&mut self, slice: SliceId, target: NodeId, failed: NodeId) {
        let retry = Event::RebuildCopy {
            slice,
            target: target.clone(),
            failed: failed.clone(),
        };
        if !self.placement[&slice].contains(&target) || !self.ps.contains_key(&target) {
            self.rebuild_done(&failed);
            return;
        }
        if self.faults.down(&target, self.now) {
            self.push(self.cfg.rebuild_copy_ms, retry);
            return;
        }
        let src = self.placement[&slice]
            .iter()
            .find(|n| {
                **n != target
                    && self.faults.reachable(self.now, &target, n)
                    && self
                        .ps
                        .get(*n)
                        .and_then(|p| p.status(slice).ok())
                        .is_some_and(|s| s.ready)
            })
            .cloned();
        let Some(src) = src else {
            self.push(self.cfg.rebuild_copy_ms, retry);
            return;
        };
        let copy = match self.ps.get_mut(&src).expect("source").export_copy(slice) {
            Ok(c) => c,
            Err(_) => {
                self.push(self.cfg.rebuild_copy_ms, retry);
                return;
            }
        };
        match self
            .ps
            .get_mut(&target)
            .expect("target")
            .install_copy(&copy)
        {
            Ok(()) => {
                self.trace_line(format!(
                    "cm rebuilt slice {slice} on {target} from {src} as of {} ({} pages)",
                    copy.as_of,
                    copy.pages.len()
                ));
                self.rebuild_done(&failed);
                self.audit();
            }
            Err(_) => self.push(self.cfg.rebuild_copy_ms, retry),
        }
    }

    fn rebuild_done(&mut self, failed: &NodeId) {
        let left = self.rebuilding.entry(failed.clone()).or_insert(1);
        *left = left.saturating_sub(1);
        if *left == 0 && !self.placement.values().any(|v| v.contains(failed)) {
            self.decommission(failed);
        }
    }

    fn decommission(&mut self, n: &NodeId) {
        if !self.faults.decommissioned.insert(n.clone()) {
            return;
        }
        if let Some(p) = self.ps.remove(n) {
            self.retired_overwrites += p.disk().shadow().overwrites;
            self.retired_disk_reads += p.metrics.disk_record_reads;
        }
        self.trace_line(format!("cm {n} decommissioned"));
        self.audit();
    }

    // ---- gossip ----

    /// One anti-entropy round over the slice's replica ring. Returns the
    /// number of records moved.
    pub fn gossip_round(&mut self, slice: SliceId) -> usize {
        let Some(nodes) = self.placement.get(&slice).cloned() else {
            return 0;
        };
        *self.stats.gossip_rounds.entry(slice).or_insert(0) += 1;
        let mut moved = 0;
        let n = nodes.len();
        let pairs = if n == 2 { 1 } else { n };
        for i in 0..pairs {
            let (a, b) = (&nodes[i], &nodes[(i + 1) % n]);
            moved += self.gossip_pair(slice, a, b) + self.gossip_pair(slice, b, a);
        }
        moved
    }

    /// `from` supplies what `to` lacks.
    fn gossip_pair(&mut self, slice: SliceId, from: &NodeId, to: &NodeId) -> usize {
        if !self.faults.reachable(self.now, from, to) {
            return 0;
        }
        let Some(digest) = self.ps.get(to).and_then(|p| p.gossip_digest(slice).ok()) else {
            return 0;
        };
        let Some(fills) = self
            .ps
            .get_mut(from)
            .and_then(|p| p.gossip_supply(&digest).ok())
        else {
            return 0;
        };
        let lsns: Vec<u64> = fills
            .iter()
            .flat_map(|f| f.records.iter().map(|r| r.lsn.0))
            .collect();
        let got = self
            .ps
            .get_mut(to)
            .and_then(|p| p.gossip_receive(&fills).ok())
            .unwrap_or(0);
        if got > 0 {
            self.stats.gossip_records += got as u64;
            let shown: Vec<u64> = lsns.iter().copied().take(8).collect();
            let more = if lsns.len() > 8 { " ..." } else { "" };
            self.trace_line(format!(
                "gossip slice={slice} {from}->{to} records={got} lsns={shown:?}{more}"
            ));
        }
        got
    }

    // ---- checks ----

    fn run_check(&mut self, c: Check) {
        let res = match c {
            Check::Durability => {
                self.audit();
                match self.auditor.violations.first() {
                    None => Ok(()),
                    Some(v) => Err(v.clone()),
                }
            }
            Check::Oracle => self.check_oracle(),
            Check::Converged => self.check_converged(),
            Check::Present(l) => self.check_present(l),
            Check::AppendOnly => {
                let n = self.overwrites();
                if n == 0 {
                    Ok(())
                } else {
                    Err(format!("{n} overwritten offsets"))
                }
            }
            Check::CvMonotone => match self
                .invariant_violations
                .iter()
                .find(|v| v.contains("cv went back"))
            {
                None => Ok(()),
                Some(v) => Err(v.clone()),
            },
            Check::ReplicaConsistency => {
                let bad = self.invariant_violations.iter().find(|v| v.contains(" rr"));
                match bad {
                    Some(v) => Err(v.clone()),
                    None if self.replicas.is_empty() => Err("no read replicas".into()),
                    None => Ok(()),
                }
            }
            Check::LogCacheNoDiskReads => {
                let n = self.disk_record_reads();
                if n == 0 {
                    Ok(())
                } else {
                    Err(format!("{n} record reads from disk"))
                }
            }
            Check::RecoveryMinimal => {
                if self.recoveries.is_empty() {
                    Err("no master recovery happened".into())
                } else if let Some(r) = self
                    .recoveries
                    .iter()
                    .find(|r| r.resent > r.end.0.saturating_sub(r.checkpoint.0))
                {
                    Err(format!(
                        "recovery at t={} resent {} records after checkpoint {} (end {})",
                        r.at, r.resent, r.checkpoint, r.end
                    ))
                } else {
                    Ok(())
                }
            }
        };
        let (passed, detail) = match res {
            Ok(()) => (true, String::new()),
            Err(d) => (false, d),
        };
        self.trace_line(format!(
            "CHECK {c} {}{}{}",
            if passed { "PASS" } else { "FAIL" },
            if passed { "" } else { ": " },
            detail
        ));
        self.checks.push(CheckOutcome {
            time: self.now,
            check: c,
            passed,
            detail,
        });
    }

    fn check_oracle(&mut self) -> Result<(), String> {
        if !self.master_up() {
            return Err("master is down".into());
        }
        let pages: Vec<PageId> = self.oracle.written_pages().collect();
        for page in pages {
            match self.with_sal(|s, sim| s.read_page_routed(sim, page, None)) {
                Some(Ok((at, img))) => {
                    if img.bytes != self.oracle.page_at(page, at) {
                        return Err(format!("page {} at {at} differs from oracle", page.0));
                    }
                }
                Some(Err(e)) => return Err(format!("page {}: {e}", page.0)),
                None => return Err("master is down".into()),
            }
        }
        Ok(())
    }

    /// Whether all replicas of `slice` agree; `Err` names the first
    /// difference.
    pub fn slice_converged(&mut self, slice: SliceId) -> Result<(), String> {
        let nodes = self.placement.get(&slice).cloned().unwrap_or_default();
        let mut reference: Option<(Lsn, Vec<(Lsn, Lsn)>)> = None;
        for n in &nodes {
            let p = self.ps.get(n).ok_or(format!("{n} is gone"))?;
            let st = p.status(slice).map_err(|e| format!("{n}: {e}"))?;
            if !st.ready {
                return Err(format!("{n} is still rebuilding slice {slice}"));
            }
            if !st.gaps.is_empty() {
                return Err(format!("{n} has gaps {:?} in slice {slice}", st.gaps));
            }
            let cov: Vec<(Lsn, Lsn)> = p
                .coverage(slice)
                .map(|c| c.intervals().collect())
                .unwrap_or_default();
            match &reference {
                None => reference = Some((st.persistent, cov)),
                Some((pl, c)) => {
                    if *pl != st.persistent || *c != cov {
                        return Err(format!(
                            "slice {slice}: {n} persistent {} vs {} on {}",
                            st.persistent, pl, nodes[0]
                        ));
                    }
                }
            }
        }
        let Some((persistent, _)) = reference else {
            return Err(format!("slice {slice} has no replicas"));
        };
        let last = self.oracle.slice_last(slice);
        if persistent < last {
            return Err(format!(
                "slice {slice}: persistent {persistent} below last acknowledged record {last}"
            ));
        }
        let pages: Vec<PageId> = self
            .oracle
            .written_pages()
            .filter(|p| page_to_slice(*p, self.cfg.pages_per_slice, self.cfg.db) == slice)
            .collect();
        for page in pages {
            let want = self.oracle.page_at(page, persistent);
            for n in &nodes {
                let img = self
                    .ps
                    .get_mut(n)
                    .expect("checked")
                    .read_page(slice, page, persistent)
                    .map_err(|e| format!("{n} page {}: {e}", page.0))?;
                if img.bytes != want {
                    return Err(format!(
                        "{n} serves page {} differently at {persistent}",
                        page.0
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_converged(&mut self) -> Result<(), String> {
        let slices: Vec<SliceId> = self.placement.keys().copied().collect();
        for s in slices {
            self.slice_converged(s)?;
        }
        Ok(())
    }

    fn check_present(&self, lsn: Lsn) -> Result<(), String> {
        let (slice, page) = self
            .oracle
            .record(lsn)
            .ok_or(format!("record {lsn} was never acknowledged"))?;
        for n in &self.placement[&slice] {
            let p = self.ps.get(n).ok_or(format!("{n} is gone"))?;
            if !p.has_record(slice, lsn) && !p.covers_record(slice, page, lsn) {
                return Err(format!("{n} lacks record {lsn}"));
            }
        }
        Ok(())
    }

    // ---- results ----

    /// Overwritten offsets across Log Store and Page Store disks, including
    /// retired Page Stores.
    pub fn overwrites(&self) -> u64 {
        self.ls.total_overwrites()
            + self.retired_overwrites
            + self
                .ps
                .values()
                .map(|p| p.disk().shadow().overwrites)
                .sum::<u64>()
    }

    /// Consolidation record reads that had to go to disk.
    pub fn disk_record_reads(&self) -> u64 {
        self.retired_disk_reads
            + self
                .ps
                .values()
                .map(|p| p.metrics.disk_record_reads)
                .sum::<u64>()
    }

    pub fn trace_lines(&self) -> &[String] {
        &self.trace
    }

    pub fn trace_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.trace {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn metrics(&self) -> &[MetricRow] {
        &self.metrics
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("time_ms,metric,node,value\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.time_ms, m.metric, m.node, m.value
            ));
        }
        out
    }

    pub fn report(&self) -> RunReport {
        let mut violations: Vec<String> = self.auditor.violations.clone();
        violations.extend(self.invariant_violations.iter().cloned());
        RunReport {
            trace_hash: self.trace_hash(),
            checks: self.checks.clone(),
            violations,
            audits: self.auditor.audits,
            stats: self.stats.clone(),
        }
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn sal(&self) -> Option<&Sal> {
        self.sal.as_ref()
    }

    pub fn page_stores(&self) -> &BTreeMap<NodeId, PageStoreNode> {
        &self.ps
    }

    pub fn logstores(&self) -> &LogStoreCluster {
        &self.ls
    }

    pub fn placement(&self) -> &BTreeMap<SliceId, Vec<NodeId>> {
        &self.placement
    }

    pub fn replica(&self, id: &NodeId) -> Option<&ReadReplica> {
        self.replicas.get(id)
    }

    pub fn recoveries(&self) -> &[Recovery] {
        &self.recoveries
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn auditor(&self) -> &Auditor {
        &self.auditor
    }

    /// Heals every fault and runs `ms` of fault-free time, with periodic
    /// gossip switched off so that rounds can be counted afterwards.
    pub fn quiesce(&mut self, ms: u64) {
        self.heal();
        self.cfg.gossip_interval_ms = u64::MAX / 4;
        self.queue.retain(|_, e| !matches!(e, Event::GossipTick));
        let t = self.now + ms;
        self.run_until(t);
    }

    /// Runs explicit gossip rounds per slice until its replicas agree, up to
    /// `max_rounds`. Returns the rounds each slice needed.
    pub fn converge_by_gossip(
        &mut self,
        max_rounds: u32,
    ) -> Result<BTreeMap<SliceId, u32>, String> {
        let slices: Vec<SliceId> = self.placement.keys().copied().collect();
        let mut out = BTreeMap::new();
        for s in slices {
            let mut rounds = 0;
            while self.slice_converged(s).is_err() && rounds < max_rounds {
                self.gossip_round(s);
                rounds += 1;
            }
            self.slice_converged(s)?;
            out.insert(s, rounds);
        }
        Ok(out)
    }
}

impl SalEnv for Sim {
    fn now(&self) -> u64 {
        self.now
    }

    fn logstores(&mut self) -> &mut LogStoreCluster {
        &mut self.ls
    }

    fn log_reachable(&self) -> BTreeSet<NodeId> {
        self.ls
            .node_ids()
            .into_iter()
            .filter(|n| self.faults.reachable(self.now, &self.master, n))
            .collect()
    }

    fn page_store(&mut self, node: &NodeId) -> Option<&mut PageStoreNode> {
        if !self.faults.reachable(self.now, &self.master, node) {
            return None;
        }
        self.ps.get_mut(node)
    }

    fn call_latency(&mut self, _node: &NodeId) -> u64 {
        let j = if self.cfg.jitter_ms > 0 {
            self.rng.gen_range(0..=2 * self.cfg.jitter_ms)
        } else {
            0
        };
        2 * self.cfg.latency_ms + j
    }

    fn send(&mut self, to: &NodeId, msg: Message) {
        let m = self.master.clone();
        self.send_msg(&m, to, msg);
    }

    fn schedule(&mut self, delay_ms: u64, timer: SalTimer) {
        let epoch = self.master_epoch;
        self.push(delay_ms, Event::SalTimer { epoch, timer });
    }

    fn gossip(&mut self, slice: SliceId) {
        self.push(self.cfg.latency_ms, Event::GossipRound(slice));
    }

    fn trace(&mut self, line: String) {
        self.trace_line(line);
    }
}

#[cfg(test)]
mod tests;
