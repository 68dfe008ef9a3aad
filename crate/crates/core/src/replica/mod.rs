//! Read replica: follows the master's log through master messages, reads
//! buffers straight from the Log Stores and serves snapshot reads at a
//! transaction-visible LSN, using Page Stores for pages it does not hold.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::config::Config;
use crate::logstore::{LogStoreCluster, LogStoreError, ReadPurpose};
use crate::msg::{Extent, MasterMessage, Message, ResyncSnapshot};
use crate::record::{apply_in_place, decode_all, page_to_slice, LogRecord, PageImage};
use crate::types::{Lsn, NodeId, PageId, SliceId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplicaError {
    #[error("replica has not synchronised with the master yet")]
    NotSynced,
    #[error("view {tv} is above the visible LSN {visible}")]
    AboveVisible { tv: Lsn, visible: Lsn },
    #[error("view {tv} is below the reported low water mark {low}")]
    BelowLowWater { tv: Lsn, low: Lsn },
    #[error("no page store could serve page {page} at {lsn}")]
    Unavailable { page: PageId, lsn: Lsn },
}

#[derive(Debug, Clone)]
struct Pooled {
    /// Versions keyed by the LSN they take effect at; the smallest key is
    /// the oldest view this entry can answer.
    versions: BTreeMap<Lsn, Vec<u8>>,
    touched: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ReplicaMetrics {
    pub reads: u64,
    pub pool_hits: u64,
    pub page_store_reads: u64,
    pub buffers_read: u64,
    pub resyncs: u64,
    pub master_messages: u64,
}

#[derive(Debug)]
pub struct ReadReplica {
    pub id: NodeId,
    page_size: usize,
    pages_per_slice: u64,
    db: u32,
    pool_cap: usize,
    pub visible: Lsn,
    synced: bool,
    awaiting_resync: bool,
    seq: u64,
    known: BTreeMap<SliceId, Lsn>,
    queue: VecDeque<Extent>,
    staged: VecDeque<(Lsn, Vec<LogRecord>)>,
    /// Record LSNs per slice that are visible, pruned below the low water.
    slice_records: BTreeMap<SliceId, BTreeSet<Lsn>>,
    pool: BTreeMap<PageId, Pooled>,
    clock: u64,
    views: BTreeMap<Lsn, usize>,
    low_water: Lsn,
    pub metrics: ReplicaMetrics,
}

impl ReadReplica {
    pub fn new(id: NodeId, cfg: &Config) -> Self {
        ReadReplica {
            id,
            page_size: cfg.page_size,
            pages_per_slice: cfg.pages_per_slice,
            db: cfg.db,
            pool_cap: cfg.replica_pool_pages,
            visible: Lsn::NONE,
            synced: false,
            awaiting_resync: false,
            seq: 0,
            known: BTreeMap::new(),
            queue: VecDeque::new(),
            staged: VecDeque::new(),
            slice_records: BTreeMap::new(),
            pool: BTreeMap::new(),
            clock: 0,
            views: BTreeMap::new(),
            low_water: Lsn::NONE,
            metrics: ReplicaMetrics::default(),
        }
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn low_water(&self) -> Lsn {
        self.low_water
    }

    pub fn pool_len(&self) -> usize {
        self.pool.len()
    }

    /// Message to send to the master to (re)register.
    pub fn request_resync(&mut self) -> Option<Message> {
        if self.awaiting_resync {
            return None;
        }
        self.awaiting_resync = true;
        self.metrics.resyncs += 1;
        Some(Message::ResyncRequest)
    }

    /// Drops the current sync state (e.g. the master restarted and its
    /// message sequence starts over) and asks for a fresh snapshot.
    pub fn resync(&mut self) -> Option<Message> {
        self.synced = false;
        self.awaiting_resync = false;
        self.request_resync()
    }

    /// Forgets everything volatile, as after a process restart.
    pub fn crash(&mut self) {
        self.synced = false;
        self.awaiting_resync = false;
        self.queue.clear();
        self.staged.clear();
        self.pool.clear();
        self.views.clear();
        self.slice_records.clear();
    }

    pub fn on_master(&mut self, bytes: &[u8]) -> Option<Message> {
        self.metrics.master_messages += 1;
        if !self.synced {
            return self.request_resync();
        }
        let Ok(m) = MasterMessage::decode(bytes) else {
            return self.request_resync();
        };
        if m.seq <= self.seq {
            return None;
        }
        if m.seq != self.seq + 1 {
            return self.request_resync();
        }
        self.seq = m.seq;
        for (s, l) in m.slice_persistent {
            let k = self.known.entry(s).or_insert(Lsn::NONE);
            *k = (*k).max(l);
        }
        self.queue.extend(m.extents);
        None
    }

    pub fn on_snapshot(&mut self, snap: &ResyncSnapshot) {
        self.awaiting_resync = false;
        self.synced = true;
        self.seq = snap.seq;
        self.visible = snap.boundary;
        self.low_water = snap.boundary;
        self.known = snap.slice_persistent.clone();
        self.slice_records = snap
            .slice_last
            .iter()
            .filter(|(_, l)| !l.is_none())
            .map(|(s, l)| (*s, BTreeSet::from([*l])))
            .collect();
        self.queue = snap.extents.iter().copied().collect();
        self.staged.clear();
        self.pool.clear();
        self.views.clear();
    }

    fn tail(&self) -> Lsn {
        self.staged.back().map(|(b, _)| *b).unwrap_or(self.visible)
    }

    /// Reads queued buffers from the Log Stores and advances the visible LSN
    /// as far as Page Stores can serve. Returns the report for the master.
    pub fn pump(
        &mut self,
        ls: &mut LogStoreCluster,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Vec<Message> {
        let mut out = Vec::new();
        if !self.synced {
            out.extend(self.request_resync());
            return out;
        }
        while let Some(e) = self.queue.front().copied() {
            if e.last <= self.tail() {
                self.queue.pop_front();
                continue;
            }
            match ls.read(
                e.plog,
                e.offset,
                e.len as usize,
                ReadPurpose::Replica,
                reachable,
            ) {
                Ok(bytes) => {
                    let tail = self.tail();
                    let recs: Vec<LogRecord> = decode_all(&bytes)
                        .unwrap_or_default()
                        .into_iter()
                        .filter(|r| r.lsn > tail && r.lsn <= e.last)
                        .collect();
                    self.metrics.buffers_read += 1;
                    self.staged.push_back((e.last, recs));
                    self.queue.pop_front();
                }
                Err(LogStoreError::UnknownPLog(_)) | Err(LogStoreError::OutOfRange { .. }) => {
                    // The log moved on without us.
                    self.synced = false;
                    out.extend(self.request_resync());
                    return out;
                }
                Err(_) => break,
            }
        }
        while let Some((b, recs)) = self.staged.front() {
            let mut last: BTreeMap<SliceId, Lsn> = BTreeMap::new();
            for r in recs {
                last.insert(r.slice, r.lsn);
            }
            let ready = last
                .iter()
                .all(|(s, l)| *l <= self.known.get(s).copied().unwrap_or(Lsn::NONE));
            if !ready {
                break;
            }
            let b = *b;
            let (_, recs) = self.staged.pop_front().expect("front");
            for r in &recs {
                self.slice_records.entry(r.slice).or_default().insert(r.lsn);
                if let Some(p) = self.pool.get_mut(&r.page) {
                    let (_, cur) = p.versions.last_key_value().expect("non-empty");
                    let mut img = PageImage {
                        page: r.page,
                        version: Lsn::NONE,
                        bytes: cur.clone(),
                    };
                    if apply_in_place(&mut img, r).is_ok() {
                        p.versions.insert(r.lsn, img.bytes);
                    } else {
                        self.pool.remove(&r.page);
                    }
                }
            }
            self.visible = b;
        }
        self.prune();
        out.push(Message::MinTv {
            tv: self.low_water,
            visible: self.visible,
        });
        out
    }

    fn prune(&mut self) {
        let low = self
            .views
            .keys()
            .next()
            .copied()
            .unwrap_or(self.visible)
            .min(self.visible);
        self.low_water = self.low_water.max(low);
        let low = self.low_water;
        let keep_from = |set: &BTreeSet<Lsn>| set.range(..=low).next_back().copied();
        for set in self.slice_records.values_mut() {
            if let Some(k) = keep_from(set) {
                *set = set.split_off(&k);
            }
        }
        for p in self.pool.values_mut() {
            if let Some((&k, _)) = p.versions.range(..=low).next_back() {
                p.versions = p.versions.split_off(&k);
            }
        }
    }

    /// Pins a view at the current visible LSN.
    pub fn open_view(&mut self) -> Lsn {
        *self.views.entry(self.visible).or_default() += 1;
        self.visible
    }

    pub fn close_view(&mut self, tv: Lsn) {
        if let Some(n) = self.views.get_mut(&tv) {
            *n -= 1;
            if *n == 0 {
                self.views.remove(&tv);
            }
        }
    }

    /// Last record of `slice` at or below `tv`.
    pub fn slice_lsn_at(&self, slice: SliceId, tv: Lsn) -> Lsn {
        self.slice_records
            .get(&slice)
            .and_then(|s| s.range(..=tv).next_back().copied())
            .unwrap_or(Lsn::NONE)
    }

    /// Reads a page as of view `tv`. `fetch` is a synchronous Page Store
    /// read on one node; `slots` lists the slice's replicas in try order.
    pub fn read_page(
        &mut self,
        page: PageId,
        tv: Lsn,
        slots: &[NodeId],
        fetch: &mut dyn FnMut(&NodeId, SliceId, PageId, Lsn) -> Option<PageImage>,
    ) -> Result<PageImage, ReplicaError> {
        if !self.synced {
            return Err(ReplicaError::NotSynced);
        }
        if tv > self.visible {
            return Err(ReplicaError::AboveVisible {
                tv,
                visible: self.visible,
            });
        }
        if tv < self.low_water {
            return Err(ReplicaError::BelowLowWater {
                tv,
                low: self.low_water,
            });
        }
        self.metrics.reads += 1;
        self.clock += 1;
        let slice = page_to_slice(page, self.pages_per_slice, self.db);
        let x = self.slice_lsn_at(slice, tv);
        if let Some(p) = self.pool.get_mut(&page) {
            if let Some((_, bytes)) = p.versions.range(..=tv).next_back() {
                p.touched = self.clock;
                self.metrics.pool_hits += 1;
                return Ok(PageImage {
                    page,
                    version: x,
                    bytes: bytes.clone(),
                });
            }
        }
        let img = if x.is_none() {
            PageImage::zeroed(page, self.page_size)
        } else {
            let mut got = None;
            for n in slots {
                self.metrics.page_store_reads += 1;
                if let Some(img) = fetch(n, slice, page, x) {
                    got = Some(img);
                    break;
                }
            }
            got.ok_or(ReplicaError::Unavailable { page, lsn: x })?
        };
        if tv == self.visible && !self.pool.contains_key(&page) {
            if self.pool.len() >= self.pool_cap {
                if let Some((&victim, _)) = self.pool.iter().min_by_key(|(_, p)| p.touched) {
                    self.pool.remove(&victim);
                }
            }
            if self.pool_cap > 0 {
                self.pool.insert(
                    page,
                    Pooled {
                        versions: BTreeMap::from([(tv, img.bytes.clone())]),
                        touched: self.clock,
                    },
                );
            }
        }
        Ok(img)
    }
}

#[cfg(test)]
mod tests;
