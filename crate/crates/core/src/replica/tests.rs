use super::*;
use crate::logstore::PLogKind;
use crate::record::{DatabaseLogBuffer, Op};

struct Fixture {
    ls: LogStoreCluster,
    plog: crate::logstore::PLogId,
    cfg: Config,
    next: u64,
    seq: u64,
}

impl Fixture {
    fn new() -> Self {
        let cfg = Config::test();
        let mut ls = LogStoreCluster::new(&cfg, 3);
        let plog = ls.create_plog(PLogKind::Data, &|_| true).unwrap();
        Fixture {
            ls,
            plog,
            cfg,
            next: 1,
            seq: 0,
        }
    }

    /// Appends one buffer writing `byte` to each page; returns its extent.
    fn write(&mut self, pages: &[u64], byte: u8) -> Extent {
        let first = Lsn(self.next);
        let recs: Vec<LogRecord> = pages
            .iter()
            .map(|p| {
                let r = LogRecord {
                    slice: page_to_slice(PageId(*p), self.cfg.pages_per_slice, self.cfg.db),
                    page: PageId(*p),
                    lsn: Lsn(self.next),
                    op: Op::Delta {
                        offset: 0,
                        bytes: vec![byte],
                    },
                };
                self.next += 1;
                r
            })
            .collect();
        let payload = DatabaseLogBuffer::new(recs).unwrap().encode();
        let offset = self.ls.append(self.plog, &payload, &|_| true).unwrap();
        Extent {
            plog: self.plog,
            offset,
            len: payload.len() as u32,
            first,
            last: Lsn(self.next - 1),
        }
    }

    fn master(&mut self, extents: Vec<Extent>, known: &[(u32, u64)]) -> Vec<u8> {
        self.seq += 1;
        MasterMessage {
            seq: self.seq,
            extents,
            slice_persistent: known
                .iter()
                .map(|(s, l)| (SliceId::new(1, *s), Lsn(*l)))
                .collect(),
            last_db_lsn: Lsn(self.next - 1),
        }
        .encode()
    }
}

fn synced(f: &Fixture) -> ReadReplica {
    let mut r = ReadReplica::new(NodeId::read_replica(0), &f.cfg);
    assert!(matches!(r.request_resync(), Some(Message::ResyncRequest)));
    r.on_snapshot(&ResyncSnapshot {
        seq: f.seq,
        boundary: Lsn(f.next - 1),
        slice_persistent: BTreeMap::new(),
        slice_last: BTreeMap::new(),
        extents: Vec::new(),
    });
    r
}

#[test]
fn visibility_waits_for_page_stores() {
    let mut f = Fixture::new();
    let mut r = synced(&f);
    // Pages 1 and 20 live in slices 0 and 1.
    let e1 = f.write(&[1, 20], 7);
    let m = f.master(vec![e1], &[(0, 1)]);
    assert!(r.on_master(&m).is_none());
    r.pump(&mut f.ls, &|_| true);
    assert_eq!(r.visible, Lsn::NONE, "slice 1 not yet persistent anywhere");
    let m = f.master(Vec::new(), &[(0, 1), (1, 2)]);
    r.on_master(&m);
    let out = r.pump(&mut f.ls, &|_| true);
    assert_eq!(r.visible, Lsn(2));
    assert!(matches!(out.last(), Some(Message::MinTv { visible, .. }) if *visible == Lsn(2)));
}

#[test]
fn sequence_gap_requests_resync() {
    let mut f = Fixture::new();
    let mut r = synced(&f);
    let _lost = f.master(Vec::new(), &[]);
    let m = f.master(Vec::new(), &[]);
    assert!(matches!(r.on_master(&m), Some(Message::ResyncRequest)));
    // Only one outstanding request.
    let m = f.master(Vec::new(), &[]);
    assert!(r.on_master(&m).is_none());
}

#[test]
fn reads_translate_view_to_slice_lsn() {
    let mut f = Fixture::new();
    let mut r = synced(&f);
    // Holds the low water mark at 0 so older views stay readable.
    r.open_view();
    let e1 = f.write(&[1], 1);
    let e2 = f.write(&[20], 2);
    let e3 = f.write(&[2], 3);
    let m = f.master(vec![e1, e2, e3], &[(0, 3), (1, 2)]);
    r.on_master(&m);
    r.pump(&mut f.ls, &|_| true);
    assert_eq!(r.visible, Lsn(3));
    let slots = [NodeId::page_store(0)];
    let mut asked = Vec::new();
    let mut fetch = |_: &NodeId, _s: SliceId, p: PageId, l: Lsn| {
        asked.push((p, l));
        Some(PageImage::zeroed(p, 8))
    };
    // Slice 0 at view 2 is its record 1.
    r.read_page(PageId(5), Lsn(2), &slots, &mut fetch).unwrap();
    r.read_page(PageId(5), Lsn(3), &slots, &mut fetch).unwrap();
    assert_eq!(asked, vec![(PageId(5), Lsn(1)), (PageId(5), Lsn(3))]);
    // Second read at the visible LSN is pooled.
    r.read_page(PageId(5), Lsn(3), &slots, &mut |_, _, _, _| None)
        .unwrap();
    assert_eq!(r.metrics.pool_hits, 1);
    assert_eq!(
        r.read_page(PageId(5), Lsn(4), &slots, &mut |_, _, _, _| None),
        Err(ReplicaError::AboveVisible {
            tv: Lsn(4),
            visible: Lsn(3)
        })
    );
}

#[test]
fn pooled_pages_follow_the_log_and_keep_old_views() {
    let mut f = Fixture::new();
    let mut r = synced(&f);
    let e1 = f.write(&[1], 1);
    r.on_master(&f.master(vec![e1], &[(0, 1)]));
    r.pump(&mut f.ls, &|_| true);
    let slots = [NodeId::page_store(0)];
    let tv = r.open_view();
    let mut page = PageImage::zeroed(PageId(1), 8);
    page.bytes[0] = 1;
    let p2 = page.clone();
    r.read_page(PageId(1), tv, &slots, &mut |_, _, _, _| Some(p2.clone()))
        .unwrap();
    let e2 = f.write(&[1], 9);
    r.on_master(&f.master(vec![e2], &[(0, 2)]));
    r.pump(&mut f.ls, &|_| true);
    assert_eq!(r.low_water(), tv);
    let none = &mut |_: &NodeId, _: SliceId, _: PageId, _: Lsn| None;
    assert_eq!(
        r.read_page(PageId(1), Lsn(2), &slots, none).unwrap().bytes[0],
        9
    );
    assert_eq!(
        r.read_page(PageId(1), tv, &slots, none).unwrap().bytes[0],
        1
    );
    r.close_view(tv);
    r.pump(&mut f.ls, &|_| true);
    assert_eq!(r.low_water(), Lsn(2));
}

#[test]
fn never_written_slice_reads_as_zero() {
    let f = Fixture::new();
    let mut r = synced(&f);
    let img = r
        .read_page(PageId(40), Lsn::NONE, &[], &mut |_, _, _, _| None)
        .unwrap();
    assert!(img.bytes.iter().all(|b| *b == 0));
}
