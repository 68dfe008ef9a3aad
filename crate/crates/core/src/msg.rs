//! Messages exchanged between actors over the simulated network.

use std::collections::BTreeMap;

use crate::logstore::PLogId;
use crate::pagestore::{SliceStatus, WriteAck};
use crate::record::{read_u32, read_u64, LogFragment};
use crate::types::{Lsn, SliceId};

#[derive(Debug, Clone)]
pub enum Message {
    WriteLogs(LogFragment),
    SetRecycle { slice: SliceId, lsn: Lsn },
    Poll { slice: SliceId },
    WriteAck(WriteAck),
    PollReply { slice: SliceId, status: SliceStatus },
    Master(Vec<u8>),
    ResyncRequest,
    Snapshot(ResyncSnapshot),
    MinTv { tv: Lsn, visible: Lsn },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::WriteLogs(_) => "write_logs",
            Message::SetRecycle { .. } => "set_recycle",
            Message::Poll { .. } => "poll",
            Message::WriteAck(_) => "write_ack",
            Message::PollReply { .. } => "poll_reply",
            Message::Master(_) => "master",
            Message::ResyncRequest => "resync_request",
            Message::Snapshot(_) => "snapshot",
            Message::MinTv { .. } => "min_tv",
        }
    }
}

/// Location of one database log buffer in the Log Stores. Every buffer
/// ends at a group boundary, `last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub plog: PLogId,
    pub offset: u64,
    pub len: u32,
    pub first: Lsn,
    pub last: Lsn,
}

const EXTENT_LEN: usize = 16 + 8 + 4 + 8 + 8;
const MASTER_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MasterMessage {
    pub seq: u64,
    pub extents: Vec<Extent>,
    pub slice_persistent: BTreeMap<SliceId, Lsn>,
    pub last_db_lsn: Lsn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MasterDecodeError {
    Truncated,
    BadVersion(u8),
    BadChecksum,
    Malformed,
}

impl MasterMessage {
    /// `version u8 | len u32 | payload | crc32(payload)`.
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::new();
        p.extend_from_slice(&self.seq.to_le_bytes());
        p.extend_from_slice(&self.last_db_lsn.0.to_le_bytes());
        p.extend_from_slice(&(self.extents.len() as u32).to_le_bytes());
        for e in &self.extents {
            p.extend_from_slice(&e.plog.0);
            p.extend_from_slice(&e.offset.to_le_bytes());
            p.extend_from_slice(&e.len.to_le_bytes());
            p.extend_from_slice(&e.first.0.to_le_bytes());
            p.extend_from_slice(&e.last.0.to_le_bytes());
        }
        p.extend_from_slice(&(self.slice_persistent.len() as u32).to_le_bytes());
        for (s, l) in &self.slice_persistent {
            p.extend_from_slice(&s.db.0.to_le_bytes());
            p.extend_from_slice(&s.index.to_le_bytes());
            p.extend_from_slice(&l.0.to_le_bytes());
        }
        let mut out = Vec::with_capacity(p.len() + 9);
        out.push(MASTER_VERSION);
        out.extend_from_slice(&(p.len() as u32).to_le_bytes());
        out.extend_from_slice(&p);
        out.extend_from_slice(&crc32fast::hash(&p).to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<MasterMessage, MasterDecodeError> {
        if bytes.len() < 5 {
            return Err(MasterDecodeError::Truncated);
        }
        if bytes[0] != MASTER_VERSION {
            return Err(MasterDecodeError::BadVersion(bytes[0]));
        }
        let len = read_u32(bytes, 1) as usize;
        if bytes.len() < 5 + len + 4 {
            return Err(MasterDecodeError::Truncated);
        }
        let p = &bytes[5..5 + len];
        if read_u32(bytes, 5 + len) != crc32fast::hash(p) {
            return Err(MasterDecodeError::BadChecksum);
        }
        let need = |at: usize, n: usize| {
            if at + n <= p.len() {
                Ok(())
            } else {
                Err(MasterDecodeError::Malformed)
            }
        };
        need(0, 20)?;
        let seq = read_u64(p, 0);
        let last_db_lsn = Lsn(read_u64(p, 8));
        let n = read_u32(p, 16) as usize;
        let mut at = 20;
        need(at, n * EXTENT_LEN)?;
        let mut extents = Vec::with_capacity(n);
        for _ in 0..n {
            let mut id = [0u8; 16];
            id.copy_from_slice(&p[at..at + 16]);
            extents.push(Extent {
                plog: PLogId(id),
                offset: read_u64(p, at + 16),
                len: read_u32(p, at + 24),
                first: Lsn(read_u64(p, at + 28)),
                last: Lsn(read_u64(p, at + 36)),
            });
            at += EXTENT_LEN;
        }
        need(at, 4)?;
        let m = read_u32(p, at) as usize;
        at += 4;
        need(at, m * 16)?;
        let mut slice_persistent = BTreeMap::new();
        for _ in 0..m {
            let s = SliceId::new(read_u32(p, at), read_u32(p, at + 4));
            slice_persistent.insert(s, Lsn(read_u64(p, at + 8)));
            at += 16;
        }
        if at != p.len() {
            return Err(MasterDecodeError::Malformed);
        }
        Ok(MasterMessage {
            seq,
            extents,
            slice_persistent,
            last_db_lsn,
        })
    }
}

/// Full state handed to a read replica that registers or lost messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResyncSnapshot {
    /// Sequence number of the last master message reflected here.
    pub seq: u64,
    /// Group boundary the replica starts from.
    pub boundary: Lsn,
    pub slice_persistent: BTreeMap<SliceId, Lsn>,
    /// Last record LSN at or below `boundary`, per slice.
    pub slice_last: BTreeMap<SliceId, Lsn>,
    /// Buffers after `boundary`, in order.
    pub extents: Vec<Extent>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg() -> MasterMessage {
        MasterMessage {
            seq: 9,
            extents: vec![Extent {
                plog: PLogId([3; 16]),
                offset: 128,
                len: 77,
                first: Lsn(40),
                last: Lsn(44),
            }],
            slice_persistent: [(SliceId::new(1, 0), Lsn(40)), (SliceId::new(1, 3), Lsn(12))]
                .into_iter()
                .collect(),
            last_db_lsn: Lsn(44),
        }
    }

    #[test]
    fn master_message_round_trips() {
        let m = msg();
        assert_eq!(MasterMessage::decode(&m.encode()).unwrap(), m);
        let empty = MasterMessage::default();
        assert_eq!(MasterMessage::decode(&empty.encode()).unwrap(), empty);
    }

    #[test]
    fn master_message_detects_damage() {
        let mut b = msg().encode();
        let n = b.len();
        b[n - 6] ^= 1;
        assert_eq!(
            MasterMessage::decode(&b),
            Err(MasterDecodeError::BadChecksum)
        );
        let b = msg().encode();
        assert_eq!(
            MasterMessage::decode(&b[..b.len() - 1]),
            Err(MasterDecodeError::Truncated)
        );
        let mut b = msg().encode();
        b[0] = 7;
        assert_eq!(
            MasterMessage::decode(&b),
            Err(MasterDecodeError::BadVersion(7))
        );
    }
}
