//! Log records, their on-disk encoding, and page images.
//!
//! Encoded record layout (all integers little-endian):
//!
//! ```text
//! magic u32 = 0x54524C47 ("TRLG")
//! db u32 | slice u32 | page u64 | lsn u64 | kind u8 | payload_len u32
//! payload (FullImage: page bytes; Delta: offset u32 then bytes)
//! crc32 u32 over magic..payload (IEEE)
//! ```

use std::collections::BTreeSet;

use thiserror::Error;

use crate::types::{Lsn, PageId, SliceId};

pub const RECORD_MAGIC: u32 = 0x5452_4C47;
/// magic + db + slice + page + lsn + kind + payload length.
pub const RECORD_HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 1 + 4;
pub const RECORD_TRAILER_LEN: usize = 4;

const KIND_FULL: u8 = 1;
const KIND_DELTA: u8 = 2;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum RecordError {
    #[error("bad record magic {0:#010x}")]
    BadMagic(u32),
    #[error("record checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    BadChecksum { stored: u32, computed: u32 },
    #[error("truncated record: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed record: {0}")]
    Malformed(&'static str),
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ApplyError {
    #[error("record lsn {record} does not follow page version {base}")]
    VersionOrderViolation { base: Lsn, record: Lsn },
    #[error("delta [{offset}, {end}) exceeds page size {page_size}")]
    DeltaOutOfBounds {
        offset: usize,
        end: usize,
        page_size: usize,
    },
    #[error("record for page {record} applied to page {base}")]
    PageMismatch { base: PageId, record: PageId },
}

/// Page mutation carried by a log record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    FullImage(Vec<u8>),
    Delta { offset: u32, bytes: Vec<u8> },
}

impl Op {
    fn payload_len(&self) -> usize {
        match self {
            Op::FullImage(b) => b.len(),
            Op::Delta { bytes, .. } => 4 + bytes.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub slice: SliceId,
    pub page: PageId,
    pub lsn: Lsn,
    pub op: Op,
}

impl LogRecord {
    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.op.payload_len() + RECORD_TRAILER_LEN
    }

    /// CRC32 of the encoded header and payload.
    pub fn checksum(&self) -> u32 {
        let bytes = self.encode();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&RECORD_MAGIC.to_le_bytes());
        out.extend_from_slice(&self.slice.db.0.to_le_bytes());
        out.extend_from_slice(&self.slice.index.to_le_bytes());
        out.extend_from_slice(&self.page.0.to_le_bytes());
        out.extend_from_slice(&self.lsn.0.to_le_bytes());
        match &self.op {
            Op::FullImage(bytes) => {
                out.push(KIND_FULL);
                out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
                out.extend_from_slice(bytes);
            }
            Op::Delta { offset, bytes } => {
                out.push(KIND_DELTA);
                out.extend_from_slice(&((bytes.len() + 4) as u32).to_le_bytes());
                out.extend_from_slice(&offset.to_le_bytes());
                out.extend_from_slice(bytes);
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    /// Decodes one record from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(LogRecord, usize), RecordError> {
        if bytes.len() < 4 {
            return Err(RecordError::Truncated {
                needed: 4,
                available: bytes.len(),
            });
        }
        let magic = read_u32(bytes, 0);
        if magic != RECORD_MAGIC {
            return Err(RecordError::BadMagic(magic));
        }
        if bytes.len() < RECORD_HEADER_LEN {
            return Err(RecordError::Truncated {
                needed: RECORD_HEADER_LEN,
                available: bytes.len(),
            });
        }
        let payload_len = read_u32(bytes, 29) as usize;
        let total = RECORD_HEADER_LEN + payload_len + RECORD_TRAILER_LEN;
        if bytes.len() < total {
            return Err(RecordError::Truncated {
                needed: total,
                available: bytes.len(),
            });
        }
        let stored = read_u32(bytes, total - 4);
        let computed = crc32fast::hash(&bytes[..total - 4]);
        if stored != computed {
            return Err(RecordError::BadChecksum { stored, computed });
        }
        let slice = SliceId::new(read_u32(bytes, 4), read_u32(bytes, 8));
        let page = PageId(read_u64(bytes, 12));
        let lsn = Lsn(read_u64(bytes, 20));
        let payload = &bytes[RECORD_HEADER_LEN..RECORD_HEADER_LEN + payload_len];
        let op = match bytes[28] {
            KIND_FULL => Op::FullImage(payload.to_vec()),
            KIND_DELTA => {
                if payload.len() < 4 {
                    return Err(RecordError::Malformed("delta payload shorter than offset"));
                }
                Op::Delta {
                    offset: read_u32(payload, 0),
                    bytes: payload[4..].to_vec(),
                }
            }
            _ => return Err(RecordError::Malformed("unknown payload kind")),
        };
        if lsn.is_none() {
            return Err(RecordError::Malformed("lsn 0 is reserved"));
        }
        Ok((
            LogRecord {
                slice,
                page,
                lsn,
                op,
            },
            total,
        ))
    }
}

/// Free-function form of [`LogRecord::encode`].
pub fn encode_log_record(record: &LogRecord) -> Vec<u8> {
    record.encode()
}

/// Free-function form of [`LogRecord::decode`].
pub fn decode_log_record(bytes: &[u8]) -> Result<(LogRecord, usize), RecordError> {
    LogRecord::decode(bytes)
}

/// Decodes a concatenation of records, stopping cleanly at a truncated tail.
/// A checksum failure anywhere is reported as an error.
pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<LogRecord>, RecordError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        match LogRecord::decode(bytes) {
            Ok((rec, used)) => {
                out.push(rec);
                bytes = &bytes[used..];
            }
            Err(RecordError::Truncated { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub(crate) fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub(crate) fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn page_to_slice(page: PageId, pages_per_slice: u64, db: u32) -> SliceId {
    assert!(pages_per_slice >= 1, "pages_per_slice must be positive");
    SliceId::new(db, (page.0 / pages_per_slice) as u32)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageImage {
    pub page: PageId,
    pub version: Lsn,
    pub bytes: Vec<u8>,
}

impl PageImage {
    pub fn zeroed(page: PageId, page_size: usize) -> Self {
        PageImage {
            page,
            version: Lsn::NONE,
            bytes: vec![0; page_size],
        }
    }
}

/// Applies `record` on top of `base`, producing the next page version.
pub fn apply_record(base: &PageImage, record: &LogRecord) -> Result<PageImage, ApplyError> {
    let mut next = base.clone();
    apply_in_place(&mut next, record)?;
    Ok(next)
}

pub fn apply_in_place(page: &mut PageImage, record: &LogRecord) -> Result<(), ApplyError> {
    if record.page != page.page {
        return Err(ApplyError::PageMismatch {
            base: page.page,
            record: record.page,
        });
    }
    if record.lsn <= page.version {
        return Err(ApplyError::VersionOrderViolation {
            base: page.version,
            record: record.lsn,
        });
    }
    let page_size = page.bytes.len();
    match &record.op {
        Op::FullImage(bytes) => {
            if bytes.len() != page_size {
                return Err(ApplyError::DeltaOutOfBounds {
                    offset: 0,
                    end: bytes.len(),
                    page_size,
                });
            }
            page.bytes.copy_from_slice(bytes);
        }
        Op::Delta { offset, bytes } => {
            let offset = *offset as usize;
            let end = offset + bytes.len();
            if end > page_size {
                return Err(ApplyError::DeltaOutOfBounds {
                    offset,
                    end,
                    page_size,
                });
            }
            page.bytes[offset..end].copy_from_slice(bytes);
        }
    }
    page.version = record.lsn;
    Ok(())
}

/// A per-slice batch of records shipped from the SAL to Page Stores.
///
/// Besides its records a fragment asserts coverage: every record of `slice`
/// with an LSN in `(covers_after, covers_through]` is contained in it. Page
/// Stores derive their persistent LSN and gap list from the union of these
/// claims, which lets repair and gossip traffic close holes the same way
/// regular traffic does.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogFragment {
    pub slice: SliceId,
    pub sequence: u64,
    pub records: Vec<LogRecord>,
    pub group_ends: BTreeSet<Lsn>,
    pub covers_after: Lsn,
    pub covers_through: Lsn,
}

impl LogFragment {
    pub fn first_lsn(&self) -> Option<Lsn> {
        self.records.first().map(|r| r.lsn)
    }

    pub fn last_lsn(&self) -> Option<Lsn> {
        self.records.last().map(|r| r.lsn)
    }

    pub fn byte_len(&self) -> usize {
        self.records.iter().map(|r| r.encoded_len()).sum()
    }

    /// Checks sortedness, slice membership and coverage bounds.
    pub fn is_well_formed(&self) -> bool {
        let sorted = self.records.windows(2).all(|w| w[0].lsn < w[1].lsn);
        let same_slice = self.records.iter().all(|r| r.slice == self.slice);
        let in_cover = self
            .records
            .iter()
            .all(|r| r.lsn > self.covers_after && r.lsn <= self.covers_through);
        sorted && same_slice && in_cover && self.covers_after <= self.covers_through
    }
}

/// A group flush of records across any slices; always ends at a group boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatabaseLogBuffer {
    pub records: Vec<LogRecord>,
}

impl DatabaseLogBuffer {
    pub fn new(records: Vec<LogRecord>) -> Option<Self> {
        if records.is_empty() || !records.windows(2).all(|w| w[0].lsn < w[1].lsn) {
            return None;
        }
        Some(DatabaseLogBuffer { records })
    }

    pub fn first_lsn(&self) -> Lsn {
        self.records[0].lsn
    }

    pub fn last_lsn(&self) -> Lsn {
        self.records[self.records.len() - 1].lsn
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.records.iter().map(|r| r.encoded_len()).sum());
        for r in &self.records {
            r.encode_into(&mut out);
        }
        out
    }
}
