//! Reference oracle and the global invariant auditor used by the simulator.

use std::collections::{BTreeMap, BTreeSet};

use crate::logstore::LogStoreCluster;
use crate::pagestore::PageStoreNode;
use crate::record::{apply_in_place, LogRecord, Op, PageImage};
use crate::types::{Lsn, NodeId, PageId, SliceId};

/// Every acknowledged record, replayed naively from a zero page.
#[derive(Debug, Default)]
pub struct Oracle {
    page_size: usize,
    pages: BTreeMap<PageId, Vec<(Lsn, Op)>>,
    records: BTreeMap<Lsn, (SliceId, PageId)>,
    groups: BTreeSet<Lsn>,
    commit_time: BTreeMap<Lsn, u64>,
}

impl Oracle {
    pub fn new(page_size: usize) -> Self {
        Oracle {
            page_size,
            ..Oracle::default()
        }
    }

    /// Records one acknowledged group.
    pub fn commit(&mut self, records: &[LogRecord], now: u64) {
        for r in records {
            self.pages
                .entry(r.page)
                .or_default()
                .push((r.lsn, r.op.clone()));
            self.records.insert(r.lsn, (r.slice, r.page));
        }
        if let Some(last) = records.last() {
            self.groups.insert(last.lsn);
            self.commit_time.insert(last.lsn, now);
        }
    }

    pub fn page_at(&self, page: PageId, lsn: Lsn) -> Vec<u8> {
        let mut img = PageImage::zeroed(page, self.page_size);
        for (l, op) in self.pages.get(&page).into_iter().flatten() {
            if *l > lsn {
                break;
            }
            let rec = LogRecord {
                slice: SliceId::new(0, 0),
                page,
                lsn: *l,
                op: op.clone(),
            };
            apply_in_place(&mut img, &rec).expect("oracle ops fit the page");
        }
        img.bytes
    }

    pub fn records(&self) -> &BTreeMap<Lsn, (SliceId, PageId)> {
        &self.records
    }

    pub fn record(&self, lsn: Lsn) -> Option<(SliceId, PageId)> {
        self.records.get(&lsn).copied()
    }

    pub fn is_group_boundary(&self, lsn: Lsn) -> bool {
        lsn.is_none() || self.groups.contains(&lsn)
    }

    /// Commit time of the group ending at or below `lsn`.
    pub fn commit_time(&self, lsn: Lsn) -> Option<u64> {
        self.commit_time.range(..=lsn).next_back().map(|(_, t)| *t)
    }

    /// Group boundaries in `[lo, hi]`.
    pub fn boundaries(&self, lo: Lsn, hi: Lsn) -> Vec<Lsn> {
        let mut out: Vec<Lsn> = self.groups.range(lo..=hi).copied().collect();
        if lo.is_none() {
            out.insert(0, Lsn::NONE);
        }
        out
    }

    /// Last acknowledged record of `slice`.
    pub fn slice_last(&self, slice: SliceId) -> Lsn {
        self.records
            .iter()
            .rev()
            .find(|(_, (s, _))| *s == slice)
            .map(|(l, _)| *l)
            .unwrap_or(Lsn::NONE)
    }

    pub fn written_pages(&self) -> impl Iterator<Item = PageId> + '_ {
        self.pages.keys().copied()
    }

    pub fn last_lsn(&self) -> Lsn {
        self.records
            .keys()
            .next_back()
            .copied()
            .unwrap_or(Lsn::NONE)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Checks that every acknowledged record has at least three durable copies
/// (Log Store PLog replicas plus Page Stores holding the record or a later
/// version of its page) and that Page Stores hold only acknowledged records.
#[derive(Debug, Default)]
pub struct Auditor {
    pub audits: u64,
    pub violations: Vec<String>,
}

impl Auditor {
    pub fn audit(
        &mut self,
        now: u64,
        oracle: &Oracle,
        ls: &LogStoreCluster,
        ps: &BTreeMap<NodeId, PageStoreNode>,
    ) {
        self.audits += 1;
        let mut ranges: BTreeMap<Lsn, (Lsn, usize)> = BTreeMap::new();
        for (r, n) in ls.durable_copies() {
            let e = ranges.entry(r.first).or_insert((r.last, 0));
            if n > e.1 || r.last > e.0 {
                *e = (e.0.max(r.last), e.1.max(n));
            }
        }
        for (&lsn, &(slice, page)) in oracle.records() {
            let mut copies = ranges
                .range(..=lsn)
                .next_back()
                .filter(|(_, (last, _))| *last >= lsn)
                .map(|(_, (_, n))| *n)
                .unwrap_or(0);
            if copies < 3 {
                copies += ps
                    .values()
                    .filter(|p| p.covers_record(slice, page, lsn))
                    .count();
            }
            if copies < 3 {
                self.violate(format!(
                    "t={now} record {lsn} of page {} has {copies} durable copies",
                    page.0
                ));
            }
        }
        for (id, p) in ps {
            for slice in p.slice_ids() {
                for lsn in p.record_lsns(slice) {
                    if !oracle.records().contains_key(&lsn) {
                        self.violate(format!(
                            "t={now} {id} holds unacknowledged record {lsn} of slice {slice}"
                        ));
                    }
                }
            }
        }
    }

    fn violate(&mut self, v: String) {
        if self.violations.len() < 100 {
            self.violations.push(v);
        }
    }

    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}
