//! Metadata PLog records: a full snapshot of the data PLog chain plus the
//! database persistent LSN checkpoint.
//!
//! Framing: `len u32 | payload | crc32(payload) u32`, payload =
//! `epoch u64 | db_persistent u64 | n u32 | n * (id [16] | first u64 | last u64 | sealed u8)`.

use crate::record::{read_u32, read_u64};
use crate::types::{Lsn, LsnRange};

use super::PLogId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEntry {
    pub plog: PLogId,
    /// `None` until the first record lands in the PLog.
    pub lsns: Option<LsnRange>,
    pub sealed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetadataRecord {
    pub chain: Vec<ChainEntry>,
    pub db_persistent_lsn: Lsn,
    pub epoch: u64,
}

const ENTRY_LEN: usize = 16 + 8 + 8 + 1;

impl MetadataRecord {
    /// Chain ordered by LSN range and non-overlapping.
    pub fn chain_is_ordered(&self) -> bool {
        let ranges: Vec<_> = self.chain.iter().filter_map(|e| e.lsns).collect();
        ranges.windows(2).all(|w| w[0].last < w[1].first)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(20 + self.chain.len() * ENTRY_LEN);
        payload.extend_from_slice(&self.epoch.to_le_bytes());
        payload.extend_from_slice(&self.db_persistent_lsn.0.to_le_bytes());
        payload.extend_from_slice(&(self.chain.len() as u32).to_le_bytes());
        for e in &self.chain {
            payload.extend_from_slice(&e.plog.0);
            let (first, last) = e.lsns.map(|r| (r.first.0, r.last.0)).unwrap_or((0, 0));
            payload.extend_from_slice(&first.to_le_bytes());
            payload.extend_from_slice(&last.to_le_bytes());
            payload.push(e.sealed as u8);
        }
        let mut out = Vec::with_capacity(payload.len() + 8);
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    /// Decodes one framed record; `None` on a torn or corrupt frame.
    pub fn decode(bytes: &[u8]) -> Option<(MetadataRecord, usize)> {
        if bytes.len() < 4 {
            return None;
        }
        let len = read_u32(bytes, 0) as usize;
        let total = 4 + len + 4;
        if bytes.len() < total || len < 20 {
            return None;
        }
        let payload = &bytes[4..4 + len];
        if read_u32(bytes, 4 + len) != crc32fast::hash(payload) {
            return None;
        }
        let epoch = read_u64(payload, 0);
        let db_persistent_lsn = Lsn(read_u64(payload, 8));
        let n = read_u32(payload, 16) as usize;
        if payload.len() != 20 + n * ENTRY_LEN {
            return None;
        }
        let mut chain = Vec::with_capacity(n);
        for i in 0..n {
            let at = 20 + i * ENTRY_LEN;
            let mut id = [0u8; 16];
            id.copy_from_slice(&payload[at..at + 16]);
            let first = read_u64(payload, at + 16);
            let last = read_u64(payload, at + 24);
            chain.push(ChainEntry {
                plog: PLogId(id),
                lsns: (first != 0).then(|| LsnRange::new(Lsn(first), Lsn(last))),
                sealed: payload[at + 32] != 0,
            });
        }
        Some((
            MetadataRecord {
                chain,
                db_persistent_lsn,
                epoch,
            },
            total,
        ))
    }

    /// Scans a metadata PLog and returns the last fully valid record.
    pub fn latest_in(mut bytes: &[u8]) -> Option<MetadataRecord> {
        let mut latest = None;
        while let Some((rec, used)) = MetadataRecord::decode(bytes) {
            latest = Some(rec);
            bytes = &bytes[used..];
        }
        latest
    }
}
