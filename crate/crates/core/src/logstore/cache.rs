use std::collections::{BTreeMap, VecDeque};

use super::PLogId;

/// Write-through FIFO cache of recent appends on one Log Store node.
#[derive(Debug, Default)]
pub struct FifoCache {
    capacity: usize,
    used: usize,
    order: VecDeque<(PLogId, u64)>,
    entries: BTreeMap<(PLogId, u64), Vec<u8>>,
}

impl FifoCache {
    pub fn new(capacity: usize) -> Self {
        FifoCache {
            capacity,
            ..FifoCache::default()
        }
    }

    pub fn insert(&mut self, plog: PLogId, offset: u64, bytes: &[u8]) {
        if bytes.is_empty() || bytes.len() > self.capacity {
            return;
        }
        while self.used + bytes.len() > self.capacity {
            let Some(old) = self.order.pop_front() else {
                break;
            };
            if let Some(b) = self.entries.remove(&old) {
                self.used -= b.len();
            }
        }
        self.used += bytes.len();
        self.order.push_back((plog, offset));
        self.entries.insert((plog, offset), bytes.to_vec());
    }

    /// Returns the requested range if it is fully resident.
    pub fn get(&self, plog: PLogId, offset: u64, len: usize) -> Option<Vec<u8>> {
        let end = offset + len as u64;
        let mut out = Vec::with_capacity(len);
        let mut pos = offset;
        while pos < end {
            let (&(_, start), bytes) = self
                .entries
                .range(..=(plog, pos))
                .next_back()
                .filter(|((p, _), _)| *p == plog)?;
            let entry_end = start + bytes.len() as u64;
            if entry_end <= pos {
                return None;
            }
            let take_end = entry_end.min(end);
            out.extend_from_slice(&bytes[(pos - start) as usize..(take_end - start) as usize]);
            pos = take_end;
        }
        Some(out)
    }

    pub fn forget(&mut self, plog: PLogId) {
        let keys: Vec<_> = self
            .entries
            .range((plog, 0)..=(plog, u64::MAX))
            .map(|(k, _)| *k)
            .collect();
        for k in keys {
            if let Some(b) = self.entries.remove(&k) {
                self.used -= b.len();
            }
        }
        self.order.retain(|(p, _)| *p != plog);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.used = 0;
    }

    pub fn used_bytes(&self) -> usize {
        self.used
    }

    /// Iterates resident entries as `(plog, offset, bytes)`.
    pub fn iter(&self) -> impl Iterator<Item = (PLogId, u64, &[u8])> {
        self.entries
            .iter()
            .map(|((p, o), b)| (*p, *o, b.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_adjacent_entries_and_evicts_fifo() {
        let p = PLogId([1; 16]);
        let mut c = FifoCache::new(10);
        c.insert(p, 0, b"abcd");
        c.insert(p, 4, b"efgh");
        assert_eq!(c.get(p, 2, 4).unwrap(), b"cdef");
        c.insert(p, 8, b"ijkl");
        assert!(c.get(p, 0, 2).is_none());
        assert_eq!(c.get(p, 4, 8).unwrap(), b"efghijkl");
        assert!(c.used_bytes() <= 10);
    }

    #[test]
    fn zero_capacity_caches_nothing() {
        let p = PLogId([2; 16]);
        let mut c = FifoCache::new(0);
        c.insert(p, 0, b"a");
        assert!(c.get(p, 0, 1).is_none());
    }
}
