//! Log Store service: 3-way synchronously replicated, append-only PLogs, the
//! metadata PLog chain, and each node's FIFO write-through cache.
//!
//! The cluster type doubles as the cluster manager for Log Stores: it places
//! new PLogs, tracks which nodes are suspect after failed appends, and keeps
//! the per-database registry entry naming the current metadata PLog.
//! Reachability is supplied by the caller on every operation, so the same
//! code runs under the simulator and in standalone harnesses.

mod cache;
pub mod metadata;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::Config;
use crate::disk::Disk;
use crate::record::{decode_all, LogRecord};
use crate::types::{Lsn, LsnRange, NodeId};

pub use cache::FifoCache;
pub use metadata::{ChainEntry, MetadataRecord};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PLogId(pub [u8; 16]);

impl fmt::Display for PLogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for PLogId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PLogId({self})")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PLogKind {
    Data,
    Metadata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PLogState {
    Open,
    Sealed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    ShortTerm,
    LongTerm,
}

/// Who is reading a PLog; cache effectiveness is reported per purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadPurpose {
    Replica,
    Recovery,
}

#[derive(Debug, Clone)]
pub struct PLog {
    pub id: PLogId,
    pub replicas: Vec<NodeId>,
    pub state: PLogState,
    /// Acknowledged length in bytes.
    pub length: u64,
    pub lsns: Option<LsnRange>,
    pub kind: PLogKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogStoreError {
    #[error("only {healthy} healthy log stores, need 3")]
    InsufficientHealthyNodes { healthy: usize },
    #[error("plog {0} is sealed")]
    Sealed(PLogId),
    #[error("append of {payload} bytes to plog {plog} at {length} exceeds limit {limit}")]
    SizeLimitExceeded {
        plog: PLogId,
        length: u64,
        payload: u64,
        limit: u64,
    },
    #[error("append to plog {plog} failed on {failed:?}; plog sealed")]
    AppendFailed { plog: PLogId, failed: Vec<NodeId> },
    #[error("empty append payload")]
    EmptyPayload,
    #[error("all replicas of plog {0} unavailable")]
    AllReplicasUnavailable(PLogId),
    #[error("read of [{offset}, +{len}) beyond plog {plog} length {length}")]
    OutOfRange {
        plog: PLogId,
        offset: u64,
        len: usize,
        length: u64,
    },
    #[error("unknown plog {0}")]
    UnknownPLog(PLogId),
    #[error("every copy of plog {0} is gone")]
    ReplicaSourceLost(PLogId),
    #[error("no readable metadata for database {0}")]
    MetadataUnreadable(u32),
    #[error("unknown log store node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Default, Clone)]
pub struct LogStoreMetrics {
    pub appends: u64,
    pub cache_hits: u64,
    pub replica_disk_reads: u64,
    pub recovery_disk_reads: u64,
    pub plogs_created: u64,
    pub plogs_sealed: u64,
    pub plogs_deleted: u64,
    pub replicas_recreated: u64,
}

#[derive(Debug)]
pub struct LogStoreNode {
    pub id: NodeId,
    disk: Disk,
    cache: FifoCache,
    bytes_stored: u64,
    /// Deletes issued while the node was unreachable, applied on return.
    tombstones: BTreeSet<PLogId>,
}

impl LogStoreNode {
    fn new(id: NodeId, disk: Disk, cache_bytes: usize) -> Self {
        LogStoreNode {
            id,
            disk,
            cache: FifoCache::new(cache_bytes),
            bytes_stored: 0,
            tombstones: BTreeSet::new(),
        }
    }

    pub fn file_name(&self, plog: PLogId) -> String {
        format!("{}/{}.plog", self.id, plog)
    }

    fn local_len(&self, plog: PLogId) -> Option<u64> {
        self.disk.len(&self.file_name(plog))
    }

    fn append_local(&mut self, plog: PLogId, bytes: &[u8]) -> u64 {
        let name = self.file_name(plog);
        let offset = self.disk.append(&name, bytes);
        self.bytes_stored += bytes.len() as u64;
        self.cache.insert(plog, offset, bytes);
        offset
    }

    fn remove_local(&mut self, plog: PLogId) {
        let name = self.file_name(plog);
        if let Some(len) = self.disk.len(&name) {
            self.bytes_stored -= len;
        }
        self.disk.remove(&name);
        self.cache.forget(plog);
    }

    pub fn disk(&self) -> &Disk {
        &self.disk
    }

    pub fn cache(&self) -> &FifoCache {
        &self.cache
    }

    pub fn holds(&self, plog: PLogId) -> bool {
        self.local_len(plog).is_some()
    }
}

#[derive(Debug)]
pub struct LogStoreCluster {
    plog_limit: u64,
    metadata_limit: u64,
    cache_bytes: usize,
    nodes: BTreeMap<NodeId, LogStoreNode>,
    plogs: BTreeMap<PLogId, PLog>,
    retired: BTreeSet<PLogId>,
    suspects: BTreeSet<NodeId>,
    decommissioned: BTreeSet<NodeId>,
    registry: BTreeMap<u32, PLogId>,
    rng: ChaCha8Rng,
    pub metrics: LogStoreMetrics,
}

impl LogStoreCluster {
    pub fn new(cfg: &Config, seed: u64) -> Self {
        let mut c = LogStoreCluster {
            plog_limit: cfg.plog_size_limit,
            metadata_limit: cfg.metadata_plog_size_limit,
            cache_bytes: cfg.fifo_cache_bytes,
            nodes: BTreeMap::new(),
            plogs: BTreeMap::new(),
            retired: BTreeSet::new(),
            suspects: BTreeSet::new(),
            decommissioned: BTreeSet::new(),
            registry: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x4c4f_4753),
            metrics: LogStoreMetrics::default(),
        };
        for i in 0..cfg.log_stores {
            c.add_node(NodeId::log_store(i), Disk::in_memory());
        }
        c
    }

    pub fn add_node(&mut self, id: NodeId, disk: Disk) {
        let node = LogStoreNode::new(id.clone(), disk, self.cache_bytes);
        self.nodes.insert(id, node);
    }

    pub fn node(&self, id: &NodeId) -> Option<&LogStoreNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &LogStoreNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn plog(&self, id: PLogId) -> Option<&PLog> {
        self.plogs.get(&id)
    }

    pub fn plogs(&self) -> impl Iterator<Item = &PLog> {
        self.plogs.values()
    }

    pub fn is_decommissioned(&self, id: &NodeId) -> bool {
        self.decommissioned.contains(id)
    }

    pub fn plog_limit(&self) -> u64 {
        self.plog_limit
    }

    /// Clears the suspect mark once a node is seen healthy again.
    pub fn mark_healthy(&mut self, id: &NodeId) {
        self.suspects.remove(id);
    }

    pub fn mark_suspect(&mut self, id: &NodeId) {
        if self.nodes.contains_key(id) {
            self.suspects.insert(id.clone());
        }
    }

    fn fresh_id(&mut self) -> PLogId {
        loop {
            let id = PLogId(self.rng.gen());
            if !self.plogs.contains_key(&id) && !self.retired.contains(&id) {
                return id;
            }
        }
    }

    /// Places a new Open PLog on the three healthy nodes storing the fewest
    /// bytes; ties are broken by the seeded RNG.
    pub fn create_plog(
        &mut self,
        kind: PLogKind,
        healthy: &dyn Fn(&NodeId) -> bool,
    ) -> Result<PLogId, LogStoreError> {
        let mut candidates: Vec<(u64, NodeId)> = self
            .nodes
            .values()
            .filter(|n| {
                !self.decommissioned.contains(&n.id)
                    && !self.suspects.contains(&n.id)
                    && healthy(&n.id)
            })
            .map(|n| (n.bytes_stored, n.id.clone()))
            .collect();
        if candidates.len() < 3 {
            return Err(LogStoreError::InsufficientHealthyNodes {
                healthy: candidates.len(),
            });
        }
        candidates.shuffle(&mut self.rng);
        candidates.sort_by_key(|(bytes, _)| *bytes);
        let replicas: Vec<NodeId> = candidates.into_iter().take(3).map(|(_, n)| n).collect();
        let id = self.fresh_id();
        for r in &replicas {
            let node = self.nodes.get_mut(r).expect("candidate exists");
            node.append_local(id, &[]);
        }
        self.plogs.insert(
            id,
            PLog {
                id,
                replicas,
                state: PLogState::Open,
                length: 0,
                lsns: None,
                kind,
            },
        );
        self.metrics.plogs_created += 1;
        Ok(id)
    }

    pub fn seal(&mut self, id: PLogId) -> Result<(), LogStoreError> {
        let plog = self
            .plogs
            .get_mut(&id)
            .ok_or(LogStoreError::UnknownPLog(id))?;
        if plog.state == PLogState::Open {
            plog.state = PLogState::Sealed;
            self.metrics.plogs_sealed += 1;
        }
        Ok(())
    }

    /// Synchronously replicated append. Acknowledged only when every replica
    /// wrote the payload; any unreachable replica seals the PLog.
    pub fn append(
        &mut self,
        id: PLogId,
        payload: &[u8],
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<u64, LogStoreError> {
        let plog = self.plogs.get(&id).ok_or(LogStoreError::UnknownPLog(id))?;
        if plog.state == PLogState::Sealed {
            return Err(LogStoreError::Sealed(id));
        }
        if payload.is_empty() {
            return Err(LogStoreError::EmptyPayload);
        }
        let limit = match plog.kind {
            PLogKind::Data => self.plog_limit,
            PLogKind::Metadata => self.metadata_limit,
        };
        if plog.length + payload.len() as u64 > limit {
            return Err(LogStoreError::SizeLimitExceeded {
                plog: id,
                length: plog.length,
                payload: payload.len() as u64,
                limit,
            });
        }
        let offset = plog.length;
        let replicas = plog.replicas.clone();
        let kind = plog.kind;
        let mut failed = Vec::new();
        for r in &replicas {
            let usable = reachable(r) && !self.decommissioned.contains(r);
            let node = self.nodes.get_mut(r).expect("replica node exists");
            if usable && node.local_len(id) == Some(offset) {
                node.append_local(id, payload);
            } else {
                failed.push(r.clone());
            }
        }
        if !failed.is_empty() {
            for f in &failed {
                self.suspects.insert(f.clone());
            }
            self.seal(id)?;
            return Err(LogStoreError::AppendFailed { plog: id, failed });
        }
        let plog = self.plogs.get_mut(&id).expect("checked above");
        plog.length += payload.len() as u64;
        if kind == PLogKind::Data {
            if let Ok(records) = decode_all(payload) {
                if let (Some(first), Some(last)) = (records.first(), records.last()) {
                    plog.lsns = Some(match plog.lsns {
                        None => LsnRange::new(first.lsn, last.lsn),
                        Some(r) => LsnRange::new(r.first, r.last.max(last.lsn)),
                    });
                }
            }
        }
        self.metrics.appends += 1;
        Ok(offset)
    }

    /// Reads acknowledged bytes, preferring any replica's FIFO cache and
    /// falling back to the first available replica's file.
    pub fn read(
        &mut self,
        id: PLogId,
        offset: u64,
        len: usize,
        purpose: ReadPurpose,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<Vec<u8>, LogStoreError> {
        let plog = self.plogs.get(&id).ok_or(LogStoreError::UnknownPLog(id))?;
        if offset + len as u64 > plog.length {
            return Err(LogStoreError::OutOfRange {
                plog: id,
                offset,
                len,
                length: plog.length,
            });
        }
        let available: Vec<NodeId> = plog
            .replicas
            .iter()
            .filter(|r| reachable(r) && !self.decommissioned.contains(*r))
            .filter(|r| {
                self.nodes
                    .get(*r)
                    .and_then(|n| n.local_len(id))
                    .is_some_and(|l| l >= offset + len as u64)
            })
            .cloned()
            .collect();
        for r in &available {
            if let Some(bytes) = self.nodes[r].cache.get(id, offset, len) {
                self.metrics.cache_hits += 1;
                return Ok(bytes);
            }
        }
        let Some(first) = available.first() else {
            return Err(LogStoreError::AllReplicasUnavailable(id));
        };
        let node = self.nodes.get_mut(first).expect("available node exists");
        let name = node.file_name(id);
        let bytes = node
            .disk
            .read(&name, offset, len)
            .ok_or(LogStoreError::AllReplicasUnavailable(id))?;
        match purpose {
            ReadPurpose::Replica => self.metrics.replica_disk_reads += 1,
            ReadPurpose::Recovery => self.metrics.recovery_disk_reads += 1,
        }
        Ok(bytes)
    }

    /// Reads and decodes every acknowledged record of a data PLog.
    pub fn read_records(
        &mut self,
        id: PLogId,
        purpose: ReadPurpose,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<Vec<LogRecord>, LogStoreError> {
        let length = self
            .plogs
            .get(&id)
            .ok_or(LogStoreError::UnknownPLog(id))?
            .length;
        if length == 0 {
            return Ok(Vec::new());
        }
        let bytes = self.read(id, 0, length as usize, purpose, reachable)?;
        // Acknowledged ranges are written by whole appends, so a decode
        // failure here means storage corruption rather than a torn tail.
        Ok(decode_all(&bytes).expect("acknowledged plog bytes decode"))
    }

    /// Deletes a PLog as a whole. Replicas on unreachable nodes are
    /// tombstoned and removed when the node returns.
    pub fn delete_plog(
        &mut self,
        id: PLogId,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<(), LogStoreError> {
        let plog = self
            .plogs
            .remove(&id)
            .ok_or(LogStoreError::UnknownPLog(id))?;
        self.retired.insert(id);
        for r in &plog.replicas {
            if let Some(node) = self.nodes.get_mut(r) {
                if reachable(r) {
                    node.remove_local(id);
                } else {
                    node.tombstones.insert(id);
                }
            }
        }
        self.metrics.plogs_deleted += 1;
        Ok(())
    }

    /// Called when a node comes back: memory (the FIFO cache) is gone and
    /// pending tombstones are applied.
    pub fn restart_node(&mut self, id: &NodeId) {
        if let Some(node) = self.nodes.get_mut(id) {
            node.cache.clear();
            let tombs: Vec<PLogId> = std::mem::take(&mut node.tombstones).into_iter().collect();
            for t in tombs {
                node.remove_local(t);
            }
        }
    }

    pub fn crash_node(&mut self, id: &NodeId) {
        if let Some(node) = self.nodes.get_mut(id) {
            node.cache.clear();
        }
    }

    /// Long-term failures re-replicate every hosted PLog replica onto another
    /// node from a surviving copy and then retire the node. Returns the
    /// number of replicas recreated.
    pub fn recover_node(
        &mut self,
        id: &NodeId,
        class: FailureClass,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<usize, LogStoreError> {
        if !self.nodes.contains_key(id) {
            return Err(LogStoreError::UnknownNode(id.clone()));
        }
        if class == FailureClass::ShortTerm {
            return Ok(0);
        }
        self.decommissioned.insert(id.clone());
        let hosted: Vec<PLogId> = self
            .plogs
            .values()
            .filter(|p| p.replicas.contains(id))
            .map(|p| p.id)
            .collect();
        let mut moved = 0;
        let mut lost = None;
        for pid in hosted {
            let plog = self.plogs.get(&pid).expect("hosted plog").clone();
            if plog.state == PLogState::Open {
                self.seal(pid)?;
            }
            let source = plog.replicas.iter().find(|r| {
                *r != id
                    && reachable(r)
                    && !self.decommissioned.contains(*r)
                    && self.nodes[*r]
                        .local_len(pid)
                        .is_some_and(|l| l >= plog.length)
            });
            let Some(source) = source.cloned() else {
                lost.get_or_insert(pid);
                continue;
            };
            let mut targets: Vec<(u64, NodeId)> = self
                .nodes
                .values()
                .filter(|n| {
                    !plog.replicas.contains(&n.id)
                        && !self.decommissioned.contains(&n.id)
                        && reachable(&n.id)
                })
                .map(|n| (n.bytes_stored, n.id.clone()))
                .collect();
            targets.shuffle(&mut self.rng);
            targets.sort_by_key(|(b, _)| *b);
            let Some((_, target)) = targets.into_iter().next() else {
                return Err(LogStoreError::InsufficientHealthyNodes { healthy: 0 });
            };
            let src = &self.nodes[&source];
            let bytes = src.disk.contents(&src.file_name(pid)).expect("source file")
                [..plog.length as usize]
                .to_vec();
            let t = self.nodes.get_mut(&target).expect("target");
            t.append_local(pid, &bytes);
            let p = self.plogs.get_mut(&pid).expect("plog");
            for r in p.replicas.iter_mut() {
                if r == id {
                    *r = target.clone();
                }
            }
            moved += 1;
            self.metrics.replicas_recreated += 1;
        }
        if let Some(node) = self.nodes.get_mut(id) {
            let names: Vec<String> = node.disk.file_names().map(String::from).collect();
            for n in names {
                node.disk.remove(&n);
            }
            node.bytes_stored = 0;
            node.cache.clear();
        }
        match lost {
            Some(pid) => Err(LogStoreError::ReplicaSourceLost(pid)),
            None => Ok(moved),
        }
    }

    pub fn metadata_plog(&self, db: u32) -> Option<PLogId> {
        self.registry.get(&db).copied()
    }

    /// One atomic append of the full metadata snapshot. Rolls over to a new
    /// metadata PLog when the current one is full or sealed, deleting the
    /// old one after the latest record is written to its successor.
    pub fn write_metadata(
        &mut self,
        db: u32,
        record: &MetadataRecord,
        attempts: usize,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<PLogId, LogStoreError> {
        let bytes = record.encode();
        let mut last_err = LogStoreError::InsufficientHealthyNodes { healthy: 0 };
        for _ in 0..attempts.max(1) {
            let current = match self.registry.get(&db) {
                Some(id) if self.plogs.contains_key(id) => *id,
                _ => {
                    let id = self.create_plog(PLogKind::Metadata, reachable)?;
                    self.registry.insert(db, id);
                    id
                }
            };
            match self.append(current, &bytes, reachable) {
                Ok(_) => return Ok(current),
                Err(e @ LogStoreError::SizeLimitExceeded { .. })
                | Err(e @ LogStoreError::AppendFailed { .. })
                | Err(e @ LogStoreError::Sealed(_)) => {
                    last_err = e;
                    let next = self.create_plog(PLogKind::Metadata, reachable)?;
                    if self.append(next, &bytes, reachable).is_ok() {
                        self.registry.insert(db, next);
                        self.delete_plog(current, reachable)?;
                        return Ok(next);
                    }
                    // The fresh plog failed too; make it current and retry.
                    self.registry.insert(db, next);
                    let _ = self.delete_plog(current, reachable);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err)
    }

    /// Reads the registry's metadata PLog and returns its last valid record.
    pub fn read_latest_metadata(
        &mut self,
        db: u32,
        reachable: &dyn Fn(&NodeId) -> bool,
    ) -> Result<MetadataRecord, LogStoreError> {
        let id = self
            .registry
            .get(&db)
            .copied()
            .ok_or(LogStoreError::MetadataUnreadable(db))?;
        let plog = self
            .plogs
            .get(&id)
            .ok_or(LogStoreError::MetadataUnreadable(db))?
            .clone();
        for r in &plog.replicas {
            if !reachable(r) || self.decommissioned.contains(r) {
                continue;
            }
            let node = &self.nodes[r];
            if let Some(bytes) = node.disk.contents(&node.file_name(id)) {
                if let Some(rec) = MetadataRecord::latest_in(bytes) {
                    return Ok(rec);
                }
            }
        }
        Err(LogStoreError::MetadataUnreadable(db))
    }

    /// Replica files for `id` on live nodes, for invariant checks.
    pub fn replica_files(&self, id: PLogId) -> Vec<(NodeId, &[u8])> {
        let Some(plog) = self.plogs.get(&id) else {
            return Vec::new();
        };
        plog.replicas
            .iter()
            .filter(|r| !self.decommissioned.contains(*r))
            .filter_map(|r| {
                let n = &self.nodes[r];
                n.disk.contents(&n.file_name(id)).map(|b| (r.clone(), b))
            })
            .collect()
    }

    pub fn total_overwrites(&self) -> u64 {
        self.nodes
            .values()
            .map(|n| n.disk.shadow().overwrites)
            .sum()
    }

    /// LSN range and durable copy count of every data PLog holding records.
    pub fn durable_copies(&self) -> Vec<(LsnRange, usize)> {
        self.plogs
            .values()
            .filter(|p| p.kind == PLogKind::Data)
            .filter_map(|p| {
                let r = p.lsns?;
                let n = p
                    .replicas
                    .iter()
                    .filter(|n| {
                        !self.decommissioned.contains(*n)
                            && self.nodes[*n]
                                .local_len(p.id)
                                .is_some_and(|l| l >= p.length)
                    })
                    .count();
                Some((r, n))
            })
            .collect()
    }

    /// Nodes that durably hold acknowledged bytes of the PLog covering `lsn`.
    pub fn copies_of(&self, lsn: Lsn) -> usize {
        self.plogs
            .values()
            .filter(|p| p.kind == PLogKind::Data && p.lsns.is_some_and(|r| r.contains(lsn)))
            .map(|p| {
                p.replicas
                    .iter()
                    .filter(|r| {
                        !self.decommissioned.contains(*r)
                            && self.nodes[*r]
                                .local_len(p.id)
                                .is_some_and(|l| l >= p.length)
                    })
                    .count()
            })
            .max()
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Op;
    use crate::types::{PageId, SliceId};

    fn cluster(nodes: usize) -> LogStoreCluster {
        let cfg = Config {
            log_stores: nodes,
            ..Config::test()
        };
        LogStoreCluster::new(&cfg, 7)
    }

    fn all(_: &NodeId) -> bool {
        true
    }

    fn payload(lsn: u64) -> Vec<u8> {
        LogRecord {
            slice: SliceId::new(1, 0),
            page: PageId(1),
            lsn: Lsn(lsn),
            op: Op::Delta {
                offset: 0,
                bytes: vec![lsn as u8; 8],
            },
        }
        .encode()
    }

    #[test]
    fn create_places_on_three_distinct_nodes() {
        let mut c = cluster(100);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        let p = c.plog(id).unwrap();
        let set: BTreeSet<_> = p.replicas.iter().collect();
        assert_eq!(set.len(), 3);
        assert_eq!(p.state, PLogState::Open);
    }

    #[test]
    fn create_with_exactly_three_and_two() {
        let mut c = cluster(3);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        let mut r = c.plog(id).unwrap().replicas.clone();
        r.sort();
        assert_eq!(
            r,
            vec![
                NodeId::log_store(0),
                NodeId::log_store(1),
                NodeId::log_store(2)
            ]
        );
        let mut c = cluster(2);
        assert_eq!(
            c.create_plog(PLogKind::Data, &all),
            Err(LogStoreError::InsufficientHealthyNodes { healthy: 2 })
        );
    }

    #[test]
    fn append_acks_on_all_three_and_caches() {
        let mut c = cluster(5);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        let p = payload(1);
        assert_eq!(c.append(id, &p, &all).unwrap(), 0);
        let files = c.replica_files(id);
        assert_eq!(files.len(), 3);
        assert!(files.iter().all(|(_, b)| *b == p.as_slice()));
        let got = c.read(id, 0, p.len(), ReadPurpose::Replica, &all).unwrap();
        assert_eq!(got, p);
        assert_eq!(c.metrics.cache_hits, 1);
        assert_eq!(c.metrics.replica_disk_reads, 0);
        assert_eq!(
            c.plog(id).unwrap().lsns,
            Some(LsnRange::new(Lsn(1), Lsn(1)))
        );
    }

    #[test]
    fn one_replica_down_seals_without_retry() {
        let mut c = cluster(5);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        let victim = c.plog(id).unwrap().replicas[1].clone();
        let down = move |n: &NodeId| *n != victim;
        assert!(matches!(
            c.append(id, &payload(1), &down),
            Err(LogStoreError::AppendFailed { .. })
        ));
        assert_eq!(c.plog(id).unwrap().state, PLogState::Sealed);
        assert_eq!(
            c.append(id, &payload(2), &all),
            Err(LogStoreError::Sealed(id))
        );
        // Replica files remain prefixes of the longest one.
        let files = c.replica_files(id);
        let longest = files.iter().map(|(_, b)| b.len()).max().unwrap();
        let reference = files.iter().find(|(_, b)| b.len() == longest).unwrap().1;
        for (_, b) in &files {
            assert_eq!(*b, &reference[..b.len()]);
        }
    }

    #[test]
    fn size_limit_enforced() {
        let cfg = Config {
            log_stores: 3,
            plog_size_limit: 100,
            ..Config::test()
        };
        let mut c = LogStoreCluster::new(&cfg, 1);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        c.append(id, &payload(1), &all).unwrap();
        c.append(id, &payload(2), &all).unwrap();
        assert!(matches!(
            c.append(id, &payload(3), &all),
            Err(LogStoreError::SizeLimitExceeded { .. })
        ));
    }

    #[test]
    fn read_survives_two_replica_failures() {
        let mut c = cluster(5);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        let p = payload(4);
        c.append(id, &p, &all).unwrap();
        let survivor = c.plog(id).unwrap().replicas[2].clone();
        for r in c.plog(id).unwrap().replicas.clone() {
            c.crash_node(&r);
        }
        let only = {
            let s = survivor.clone();
            move |n: &NodeId| *n == s
        };
        assert_eq!(
            c.read(id, 0, p.len(), ReadPurpose::Recovery, &only)
                .unwrap(),
            p
        );
        assert_eq!(c.metrics.recovery_disk_reads, 1);
        let none = |_: &NodeId| false;
        assert_eq!(
            c.read(id, 0, p.len(), ReadPurpose::Recovery, &none),
            Err(LogStoreError::AllReplicasUnavailable(id))
        );
    }

    #[test]
    fn delete_twice_and_tombstones() {
        let mut c = cluster(4);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        c.append(id, &payload(1), &all).unwrap();
        c.seal(id).unwrap();
        let down = c.plog(id).unwrap().replicas[0].clone();
        let reach = {
            let d = down.clone();
            move |n: &NodeId| *n != d
        };
        c.delete_plog(id, &reach).unwrap();
        assert_eq!(c.delete_plog(id, &all), Err(LogStoreError::UnknownPLog(id)));
        assert!(c.node(&down).unwrap().holds(id));
        c.restart_node(&down);
        assert!(!c.node(&down).unwrap().holds(id));
    }

    #[test]
    fn metadata_rollover_and_recovery() {
        let cfg = Config {
            log_stores: 6,
            metadata_plog_size_limit: 200,
            ..Config::test()
        };
        let mut c = LogStoreCluster::new(&cfg, 3);
        let mut first = None;
        for epoch in 1..=10u64 {
            let rec = MetadataRecord {
                chain: vec![],
                db_persistent_lsn: Lsn(epoch * 10),
                epoch,
            };
            let id = c.write_metadata(1, &rec, 4, &all).unwrap();
            first.get_or_insert(id);
        }
        let current = c.metadata_plog(1).unwrap();
        assert_ne!(Some(current), first);
        assert!(
            c.plog(first.unwrap()).is_none(),
            "old metadata plog deleted"
        );
        let latest = c.read_latest_metadata(1, &all).unwrap();
        assert_eq!(latest.epoch, 10);
        assert_eq!(latest.db_persistent_lsn, Lsn(100));
    }

    #[test]
    fn short_term_recovery_moves_nothing() {
        let mut c = cluster(6);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        c.append(id, &payload(1), &all).unwrap();
        let n = c.plog(id).unwrap().replicas[0].clone();
        assert_eq!(c.recover_node(&n, FailureClass::ShortTerm, &all), Ok(0));
        assert!(c.plog(id).unwrap().replicas.contains(&n));
    }

    #[test]
    fn long_term_recovery_restores_three_copies_from_one() {
        let mut c = cluster(6);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        let p = payload(1);
        c.append(id, &p, &all).unwrap();
        let reps = c.plog(id).unwrap().replicas.clone();
        let failed = reps[0].clone();
        let also_down = reps[1].clone();
        let reach = {
            let (a, b) = (failed.clone(), also_down.clone());
            move |n: &NodeId| *n != a && *n != b
        };
        assert_eq!(
            c.recover_node(&failed, FailureClass::LongTerm, &reach),
            Ok(1)
        );
        let p2 = c.plog(id).unwrap();
        assert!(!p2.replicas.contains(&failed));
        assert_eq!(p2.state, PLogState::Sealed);
        let files = c.replica_files(id);
        assert_eq!(files.len(), 3);
        assert!(files.iter().all(|(_, b)| *b == p.as_slice()));
    }

    #[test]
    fn long_term_recovery_without_any_source_is_surfaced() {
        let mut c = cluster(6);
        let id = c.create_plog(PLogKind::Data, &all).unwrap();
        c.append(id, &payload(1), &all).unwrap();
        let reps = c.plog(id).unwrap().replicas.clone();
        let reach = {
            let r = reps.clone();
            move |n: &NodeId| !r.contains(n)
        };
        assert_eq!(
            c.recover_node(&reps[0], FailureClass::LongTerm, &reach),
            Err(LogStoreError::ReplicaSourceLost(id))
        );
    }
}
