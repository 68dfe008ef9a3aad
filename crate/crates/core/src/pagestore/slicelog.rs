//! Slice log block codec.
//!
//! Each block is `len u32 | type u8 | payload | crc32(type | payload)`, where
//! `len` counts the type byte and payload. A slice log is a plain
//! concatenation of blocks; a torn final block is ignored on scan.

use crate::record::{read_u32, read_u64, LogRecord, RecordError};
use crate::types::{Lsn, PageId};

const FRAGMENT: u8 = 1;
const PAGE: u8 = 2;
const RECYCLE: u8 = 3;
const BASELINE: u8 = 4;
const ASSIGN: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    Fragment {
        sequence: u64,
        covers_after: Lsn,
        covers_through: Lsn,
        group_ends: Vec<Lsn>,
        records: Vec<LogRecord>,
    },
    Page {
        page: PageId,
        version: Lsn,
        bytes: Vec<u8>,
    },
    RecycleMark(Lsn),
    /// Replacement copy point: everything up to `lsn` is represented by the
    /// page blocks that follow; reads below `floor` are refused.
    Baseline {
        lsn: Lsn,
        floor: Lsn,
    },
    /// First block of every slice log.
    Assign {
        replacement: bool,
    },
}

impl Block {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Block::Fragment {
                sequence,
                covers_after,
                covers_through,
                group_ends,
                records,
            } => {
                body.push(FRAGMENT);
                body.extend_from_slice(&sequence.to_le_bytes());
                body.extend_from_slice(&covers_after.0.to_le_bytes());
                body.extend_from_slice(&covers_through.0.to_le_bytes());
                body.extend_from_slice(&(group_ends.len() as u32).to_le_bytes());
                for g in group_ends {
                    body.extend_from_slice(&g.0.to_le_bytes());
                }
                body.extend_from_slice(&(records.len() as u32).to_le_bytes());
                for r in records {
                    r.encode_into(&mut body);
                }
            }
            Block::Page {
                page,
                version,
                bytes,
            } => {
                body.push(PAGE);
                body.extend_from_slice(&page.0.to_le_bytes());
                body.extend_from_slice(&version.0.to_le_bytes());
                body.extend_from_slice(bytes);
            }
            Block::RecycleMark(l) => {
                body.push(RECYCLE);
                body.extend_from_slice(&l.0.to_le_bytes());
            }
            Block::Baseline { lsn, floor } => {
                body.push(BASELINE);
                body.extend_from_slice(&lsn.0.to_le_bytes());
                body.extend_from_slice(&floor.0.to_le_bytes());
            }
            Block::Assign { replacement } => {
                body.push(ASSIGN);
                body.push(*replacement as u8);
            }
        }
        let mut out = Vec::with_capacity(body.len() + 8);
        out.extend_from_slice(&(body.len() as u32).to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out
    }

    /// Decodes one block; `None` if torn, corrupt or malformed.
    pub fn decode(bytes: &[u8]) -> Option<(Block, usize)> {
        if bytes.len() < 4 {
            return None;
        }
        let len = read_u32(bytes, 0) as usize;
        let total = 4 + len + 4;
        if len == 0 || bytes.len() < total {
            return None;
        }
        let body = &bytes[4..4 + len];
        if read_u32(bytes, 4 + len) != crc32fast::hash(body) {
            return None;
        }
        let p = &body[1..];
        let block = match body[0] {
            FRAGMENT => {
                if p.len() < 28 {
                    return None;
                }
                let sequence = read_u64(p, 0);
                let covers_after = Lsn(read_u64(p, 8));
                let covers_through = Lsn(read_u64(p, 16));
                let ng = read_u32(p, 24) as usize;
                let mut at = 28;
                if p.len() < at + ng * 8 + 4 {
                    return None;
                }
                let group_ends = (0..ng).map(|i| Lsn(read_u64(p, at + i * 8))).collect();
                at += ng * 8;
                let nr = read_u32(p, at) as usize;
                at += 4;
                let mut records = Vec::with_capacity(nr);
                for _ in 0..nr {
                    let (r, used) = LogRecord::decode(&p[at..]).ok()?;
                    records.push(r);
                    at += used;
                }
                if at != p.len() {
                    return None;
                }
                Block::Fragment {
                    sequence,
                    covers_after,
                    covers_through,
                    group_ends,
                    records,
                }
            }
            PAGE if p.len() >= 16 => Block::Page {
                page: PageId(read_u64(p, 0)),
                version: Lsn(read_u64(p, 8)),
                bytes: p[16..].to_vec(),
            },
            RECYCLE if p.len() == 8 => Block::RecycleMark(Lsn(read_u64(p, 0))),
            BASELINE if p.len() == 16 => Block::Baseline {
                lsn: Lsn(read_u64(p, 0)),
                floor: Lsn(read_u64(p, 8)),
            },
            ASSIGN if p.len() == 1 => Block::Assign {
                replacement: p[0] != 0,
            },
            _ => return None,
        };
        Some((block, total))
    }
}

/// Scans a slice log and returns `(offset, length, block)` for every intact
/// block up to the first torn or corrupt one.
pub fn scan(bytes: &[u8]) -> Vec<(u64, u32, Block)> {
    let mut out = Vec::new();
    let mut at = 0usize;
    while let Some((b, used)) = Block::decode(&bytes[at..]) {
        out.push((at as u64, used as u32, b));
        at += used;
    }
    out
}

/// Finds one record inside an encoded fragment block.
pub fn record_in_block(bytes: &[u8], lsn: Lsn) -> Result<LogRecord, RecordError> {
    match Block::decode(bytes) {
        Some((Block::Fragment { records, .. }, _)) => records
            .into_iter()
            .find(|r| r.lsn == lsn)
            .ok_or(RecordError::Malformed("record not in block")),
        _ => Err(RecordError::Malformed("not a fragment block")),
    }
}
