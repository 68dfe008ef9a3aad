use std::collections::BTreeMap;

use crate::config::PoolPolicy;
use crate::record::PageImage;
use crate::types::{PageId, SliceId};

pub type PoolKey = (SliceId, PageId);

#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub image: PageImage,
    pub dirty: bool,
    freq: u64,
    last_access: u64,
}

/// Node-global write-back page cache holding the newest consolidated
/// version of each resident page.
#[derive(Debug)]
pub struct BufferPool {
    capacity: usize,
    policy: PoolPolicy,
    aging_every: u64,
    entries: BTreeMap<PoolKey, PoolEntry>,
    clock: u64,
    pub hits: u64,
    pub misses: u64,
}

impl BufferPool {
    pub fn new(capacity: usize, policy: PoolPolicy, aging_every: u64) -> Self {
        BufferPool {
            capacity,
            policy,
            aging_every: aging_every.max(1),
            entries: BTreeMap::new(),
            clock: 0,
            hits: 0,
            misses: 0,
        }
    }

    pub fn policy(&self) -> PoolPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        if self.policy == PoolPolicy::Lfu && self.clock.is_multiple_of(self.aging_every) {
            for e in self.entries.values_mut() {
                e.freq /= 2;
            }
        }
        self.clock
    }

    /// Looks up the resident image without touching hit counters.
    pub fn peek(&self, key: &PoolKey) -> Option<&PoolEntry> {
        self.entries.get(key)
    }

    /// Counted lookup of a specific version.
    pub fn get(&mut self, key: &PoolKey, version: crate::types::Lsn) -> Option<PageImage> {
        let now = self.tick();
        match self.entries.get_mut(key) {
            Some(e) if e.image.version == version => {
                e.freq += 1;
                e.last_access = now;
                self.hits += 1;
                Some(e.image.clone())
            }
            _ => {
                self.misses += 1;
                None
            }
        }
    }

    /// Inserts or replaces a page. Returns the evicted entry, if any; the
    /// caller must flush it when it is dirty.
    pub fn insert(
        &mut self,
        key: PoolKey,
        image: PageImage,
        dirty: bool,
    ) -> Option<(PoolKey, PoolEntry)> {
        if self.capacity == 0 {
            return Some((
                key,
                PoolEntry {
                    image,
                    dirty,
                    freq: 0,
                    last_access: 0,
                },
            ));
        }
        let now = self.tick();
        if let Some(e) = self.entries.get_mut(&key) {
            e.dirty |= dirty;
            e.image = image;
            e.freq += 1;
            e.last_access = now;
            return None;
        }
        let evicted = if self.entries.len() >= self.capacity {
            self.victim().map(|k| {
                let e = self.entries.remove(&k).expect("victim resident");
                (k, e)
            })
        } else {
            None
        };
        self.entries.insert(
            key,
            PoolEntry {
                image,
                dirty,
                freq: 1,
                last_access: now,
            },
        );
        evicted
    }

    fn victim(&self) -> Option<PoolKey> {
        let key = |e: &PoolEntry| match self.policy {
            PoolPolicy::Lfu => (e.freq, e.last_access),
            PoolPolicy::Lru => (e.last_access, 0),
        };
        self.entries
            .iter()
            .min_by_key(|(_, e)| key(e))
            .map(|(k, _)| *k)
    }

    pub fn mark_clean(&mut self, key: &PoolKey) {
        if let Some(e) = self.entries.get_mut(key) {
            e.dirty = false;
        }
    }

    pub fn dirty_keys(&self) -> Vec<PoolKey> {
        self.entries
            .iter()
            .filter(|(_, e)| e.dirty)
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn remove(&mut self, key: &PoolKey) -> Option<PoolEntry> {
        self.entries.remove(key)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}
