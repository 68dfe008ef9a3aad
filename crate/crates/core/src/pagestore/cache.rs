use std::collections::{BTreeMap, VecDeque};

use crate::record::LogRecord;
use crate::types::{Lsn, SliceId};

/// A fragment is identified by its slice and block offset in the slice log.
pub type FragKey = (SliceId, u64);

#[derive(Debug, Clone)]
pub struct CachedFragment {
    /// Records not yet consolidated.
    pub records: BTreeMap<Lsn, LogRecord>,
    arrival: u64,
}

/// Node-global log cache: a bounded set of resident fragments plus an
/// overflow queue of spilled fragments waiting to be reloaded from disk.
#[derive(Debug, Default)]
pub struct LogCache {
    capacity: usize,
    resident: BTreeMap<FragKey, CachedFragment>,
    order: BTreeMap<u64, FragKey>,
    overflow: VecDeque<(FragKey, u32)>,
    next_arrival: u64,
    pub spills: u64,
    pub reloads: u64,
}

impl LogCache {
    pub fn new(capacity: usize) -> Self {
        LogCache {
            capacity,
            ..LogCache::default()
        }
    }

    pub fn is_full(&self) -> bool {
        self.resident.len() >= self.capacity
    }

    pub fn resident_len(&self) -> usize {
        self.resident.len()
    }

    pub fn overflow_len(&self) -> usize {
        self.overflow.len()
    }

    /// Makes a fragment resident regardless of capacity.
    pub fn admit(&mut self, key: FragKey, records: Vec<LogRecord>) {
        if records.is_empty() {
            return;
        }
        let arrival = self.next_arrival;
        self.next_arrival += 1;
        self.order.insert(arrival, key);
        self.resident.insert(
            key,
            CachedFragment {
                records: records.into_iter().map(|r| (r.lsn, r)).collect(),
                arrival,
            },
        );
    }

    pub fn spill(&mut self, key: FragKey, len: u32) {
        self.spills += 1;
        self.overflow.push_back((key, len));
    }

    /// Queues a fragment for reload without counting it as a spill.
    pub fn requeue(&mut self, key: FragKey, len: u32) {
        self.overflow.push_back((key, len));
    }

    pub fn overflow_front(&self) -> Option<(FragKey, u32)> {
        self.overflow.front().copied()
    }

    pub fn pop_overflow(&mut self) -> Option<(FragKey, u32)> {
        self.overflow.pop_front()
    }

    /// Removes and returns queued entries matching `pred`, keeping order.
    pub fn take_overflow_where(&mut self, pred: impl Fn(&FragKey) -> bool) -> Vec<(FragKey, u32)> {
        let mut taken = Vec::new();
        self.overflow.retain(|e| {
            if pred(&e.0) {
                taken.push(*e);
                false
            } else {
                true
            }
        });
        taken
    }

    pub fn is_queued(&self, key: &FragKey) -> bool {
        self.overflow.iter().any(|(k, _)| k == key)
    }

    pub fn get(&self, key: &FragKey, lsn: Lsn) -> Option<&LogRecord> {
        self.resident.get(key)?.records.get(&lsn)
    }

    pub fn contains(&self, key: &FragKey) -> bool {
        self.resident.contains_key(key)
    }

    /// Drops a consumed record; a fragment with nothing left leaves the cache.
    pub fn consume(&mut self, key: &FragKey, lsn: Lsn) {
        if let Some(f) = self.resident.get_mut(key) {
            f.records.remove(&lsn);
            if f.records.is_empty() {
                let arrival = f.arrival;
                self.resident.remove(key);
                self.order.remove(&arrival);
            }
        }
    }

    /// Drops resident records matching `pred`; emptied fragments leave.
    pub fn drop_records(&mut self, pred: impl Fn(&FragKey, &LogRecord) -> bool) {
        let keys: Vec<FragKey> = self.resident.keys().copied().collect();
        for k in keys {
            let f = self.resident.get_mut(&k).expect("listed key");
            f.records.retain(|_, r| !pred(&k, r));
            if f.records.is_empty() {
                let arrival = f.arrival;
                self.resident.remove(&k);
                self.order.remove(&arrival);
            }
        }
    }

    pub fn evict_oldest(&mut self) -> Option<FragKey> {
        let (&arrival, &key) = self.order.iter().next()?;
        self.order.remove(&arrival);
        self.resident.remove(&key);
        Some(key)
    }

    /// Resident fragments, oldest arrival first.
    pub fn arrival_order(&self) -> Vec<FragKey> {
        self.order.values().copied().collect()
    }

    pub fn fragment(&self, key: &FragKey) -> Option<&CachedFragment> {
        self.resident.get(key)
    }

    pub fn clear(&mut self) {
        self.resident.clear();
        self.order.clear();
        self.overflow.clear();
    }
}
