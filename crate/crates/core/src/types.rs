//! Identifiers shared by every service in the storage layer.

use std::fmt;

/// Logical sequence number. `Lsn::NONE` (0) means "no record".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Lsn(pub u64);

impl Lsn {
    pub const NONE: Lsn = Lsn(0);
    pub const MAX: Lsn = Lsn(u64::MAX);

    pub fn is_none(self) -> bool {
        self.0 == 0
    }

    pub fn next(self) -> Lsn {
        Lsn(self.0 + 1)
    }

    /// Predecessor, saturating at `NONE`.
    pub fn prev(self) -> Lsn {
        Lsn(self.0.saturating_sub(1))
    }
}

impl fmt::Display for Lsn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct PageId(pub u64);

impl fmt::Display for PageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DbId(pub u32);

/// A fixed-size partition of one database's pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SliceId {
    pub db: DbId,
    pub index: u32,
}

impl SliceId {
    pub fn new(db: u32, index: u32) -> Self {
        SliceId {
            db: DbId(db),
            index,
        }
    }
}

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.db.0, self.index)
    }
}

/// Node names follow `<role><n>`: `ls3`, `ps0`, `rr1`, plus `master` and `cm`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn log_store(i: usize) -> Self {
        NodeId(format!("ls{i}"))
    }

    pub fn page_store(i: usize) -> Self {
        NodeId(format!("ps{i}"))
    }

    pub fn read_replica(i: usize) -> Self {
        NodeId(format!("rr{i}"))
    }

    pub fn master() -> Self {
        NodeId("master".into())
    }

    pub fn cluster_manager() -> Self {
        NodeId("cm".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_log_store(&self) -> bool {
        self.0.starts_with("ls")
    }

    pub fn is_page_store(&self) -> bool {
        self.0.starts_with("ps")
    }

    pub fn is_read_replica(&self) -> bool {
        self.0.starts_with("rr")
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Inclusive LSN range `[first, last]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LsnRange {
    pub first: Lsn,
    pub last: Lsn,
}

impl LsnRange {
    pub fn new(first: Lsn, last: Lsn) -> Self {
        LsnRange { first, last }
    }

    pub fn contains(&self, lsn: Lsn) -> bool {
        self.first <= lsn && lsn <= self.last
    }
}

impl fmt::Display for LsnRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.first, self.last)
    }
}
