use super::*;
use crate::disk::Disk;
use crate::pagestore::PageStoreNode;

struct TestEnv {
    now: u64,
    ls: LogStoreCluster,
    ps: BTreeMap<NodeId, PageStoreNode>,
    down: BTreeSet<NodeId>,
    outbox: Vec<(NodeId, Message)>,
    timers: Vec<(u64, SalTimer)>,
    gossips: Vec<SliceId>,
}

impl SalEnv for TestEnv {
    fn now(&self) -> u64 {
        self.now
    }
    fn logstores(&mut self) -> &mut LogStoreCluster {
        &mut self.ls
    }
    fn log_reachable(&self) -> BTreeSet<NodeId> {
        self.ls
            .node_ids()
            .into_iter()
            .filter(|n| !self.down.contains(n))
            .collect()
    }
    fn page_store(&mut self, node: &NodeId) -> Option<&mut PageStoreNode> {
        if self.down.contains(node) {
            return None;
        }
        self.ps.get_mut(node)
    }
    fn call_latency(&mut self, _node: &NodeId) -> u64 {
        1
    }
    fn send(&mut self, to: &NodeId, msg: Message) {
        self.outbox.push((to.clone(), msg));
    }
    fn schedule(&mut self, delay_ms: u64, timer: SalTimer) {
        self.timers.push((self.now + delay_ms, timer));
    }
    fn gossip(&mut self, slice: SliceId) {
        self.gossips.push(slice);
    }
    fn trace(&mut self, _line: String) {}
}

fn cfg() -> Config {
    let mut c = Config::test();
    c.slices = 2;
    c.page_stores = 3;
    c
}

fn setup() -> (TestEnv, Sal) {
    let c = cfg();
    let nodes: Vec<NodeId> = (0..3).map(NodeId::page_store).collect();
    let mut placement = BTreeMap::new();
    let mut ps: BTreeMap<NodeId, PageStoreNode> = nodes
        .iter()
        .map(|n| {
            (
                n.clone(),
                PageStoreNode::new(n.clone(), &c, Disk::in_memory()),
            )
        })
        .collect();
    for i in 0..c.slices {
        let s = SliceId::new(c.db, i);
        placement.insert(s, nodes.clone());
        for p in ps.values_mut() {
            p.host_slice(s);
        }
    }
    let env = TestEnv {
        now: 0,
        ls: LogStoreCluster::new(&c, 7),
        ps,
        down: BTreeSet::new(),
        outbox: Vec::new(),
        timers: Vec::new(),
        gossips: Vec::new(),
    };
    let sal = Sal::new(&c, &placement, Vec::new(), 7);
    (env, sal)
}

fn put(page: u64, b: u8) -> (PageId, Op) {
    (
        PageId(page),
        Op::Delta {
            offset: 0,
            bytes: vec![b],
        },
    )
}

/// Delivers queued messages (except to `drop`) and feeds acks back.
fn pump(env: &mut TestEnv, sal: &mut Sal, drop: &[NodeId]) {
    loop {
        let out = std::mem::take(&mut env.outbox);
        if out.is_empty() {
            break;
        }
        for (to, m) in out {
            if drop.contains(&to) || env.down.contains(&to) {
                continue;
            }
            let Some(ps) = env.ps.get_mut(&to) else {
                continue;
            };
            match m {
                Message::WriteLogs(f) => {
                    if let Ok(ack) = ps.write_logs(&f) {
                        sal.on_ack(env, &to, &ack);
                    }
                }
                Message::Poll { slice } => {
                    if let Ok(status) = ps.status(slice) {
                        sal.on_poll_reply(env, &to, slice, &status);
                    }
                }
                Message::SetRecycle { slice, lsn } => {
                    let _ = ps.set_recycle_lsn(slice, lsn);
                }
                _ => {}
            }
        }
    }
}

fn flush_all(env: &mut TestEnv, sal: &mut Sal) {
    let ids: Vec<SliceId> = sal.slices().map(|s| s.slice).collect();
    for s in ids {
        sal.flush_slice(env, s);
    }
}

#[test]
fn lsns_are_dense_and_cv_follows_acks() {
    let (mut env, mut sal) = setup();
    assert_eq!(
        sal.write_group(&mut env, vec![put(1, 1), put(20, 2)])
            .unwrap(),
        Lsn(2)
    );
    assert_eq!(sal.write_group(&mut env, vec![put(2, 3)]).unwrap(), Lsn(3));
    assert_eq!(sal.cv, Lsn::NONE);
    flush_all(&mut env, &mut sal);
    pump(&mut env, &mut sal, &[]);
    assert_eq!(sal.cv, Lsn(3));
    assert_eq!(
        sal.write_group(&mut env, Vec::new()),
        Err(SalError::EmptyBuffer)
    );
}

#[test]
fn cv_holds_until_every_slice_fragment_acked() {
    let (mut env, mut sal) = setup();
    sal.write_group(&mut env, vec![put(1, 1), put(20, 2)])
        .unwrap();
    let s0 = SliceId::new(1, 0);
    sal.flush_slice(&mut env, s0);
    pump(&mut env, &mut sal, &[]);
    assert_eq!(sal.cv, Lsn::NONE, "slice 1 still pending");
    assert_eq!(sal.slice(s0).unwrap().flush_lsn, Lsn(1));
    sal.flush_slice(&mut env, SliceId::new(1, 1));
    pump(&mut env, &mut sal, &[]);
    assert_eq!(sal.cv, Lsn(2));
}

#[test]
fn one_ack_releases_buffer() {
    let (mut env, mut sal) = setup();
    sal.write_group(&mut env, vec![put(1, 1)]).unwrap();
    flush_all(&mut env, &mut sal);
    let drop = vec![NodeId::page_store(1), NodeId::page_store(2)];
    pump(&mut env, &mut sal, &drop);
    assert_eq!(sal.cv, Lsn(1));
}

#[test]
fn flush_timer_and_retry() {
    let (mut env, mut sal) = setup();
    sal.write_group(&mut env, vec![put(1, 1)]).unwrap();
    let (_, t) = env.timers.pop().unwrap();
    sal.on_timer(&mut env, t);
    let all: Vec<NodeId> = (0..3).map(NodeId::page_store).collect();
    pump(&mut env, &mut sal, &all);
    assert_eq!(sal.cv, Lsn::NONE);
    let (_, retry) = env.timers.pop().unwrap();
    assert!(matches!(retry, SalTimer::Retry { .. }));
    sal.on_timer(&mut env, retry);
    pump(&mut env, &mut sal, &[]);
    assert_eq!(sal.cv, Lsn(1));
    // Acknowledged: the retry timer is not rearmed.
    let before = env.timers.len();
    sal.on_timer(&mut env, retry);
    assert_eq!(env.timers.len(), before);
}

#[test]
fn db_persistent_is_min_over_lagging_slices() {
    let (_env, mut sal) = setup();
    let s0 = SliceId::new(1, 0);
    let s1 = SliceId::new(1, 1);
    for s in [s0, s1] {
        let ss = sal.slices.get_mut(&s).unwrap();
        ss.last_sent_through = Lsn(50);
        ss.flush_lsn = Lsn(50);
    }
    let p = [50, 50, 40];
    for (i, v) in p.iter().enumerate() {
        sal.slices.get_mut(&s0).unwrap().slots[i].persistent = Lsn(*v);
        sal.slices.get_mut(&s1).unwrap().slots[i].persistent = Lsn(50);
    }
    assert_eq!(sal.update_db_persistent(), Lsn(40));
    sal.slices.get_mut(&s0).unwrap().slots[2].persistent = Lsn(50);
    assert_eq!(sal.update_db_persistent(), Lsn(50));
    // Never regresses.
    sal.slices.get_mut(&s0).unwrap().slots[2].persistent = Lsn(10);
    assert_eq!(sal.update_db_persistent(), Lsn(50));
}

#[test]
fn eviction_needs_a_persistent_replica() {
    let (_env, mut sal) = setup();
    let s0 = SliceId::new(1, 0);
    sal.slices.get_mut(&s0).unwrap().slots[1].persistent = Lsn(30);
    assert!(sal.eviction_permitted(PageId(3), Lsn(30), true));
    assert!(!sal.eviction_permitted(PageId(3), Lsn(31), true));
    assert!(sal.eviction_permitted(PageId(3), Lsn(31), false));
}

#[test]
fn truncation_keeps_plogs_above_db_persistent() {
    let (mut env, mut sal) = setup();
    let big = vec![7u8; 20 * 1024];
    let mut lasts = Vec::new();
    for i in 0..8 {
        let l = sal
            .write_group(
                &mut env,
                vec![(
                    PageId(i % 16),
                    Op::Delta {
                        offset: 0,
                        bytes: big.clone(),
                    },
                )],
            )
            .unwrap();
        lasts.push(l);
    }
    assert!(sal.chain().len() >= 3, "64KB plogs roll over");
    flush_all(&mut env, &mut sal);
    pump(&mut env, &mut sal, &[]);
    sal.db_persistent = Lsn(4);
    let before = sal.chain().len();
    let n = sal.truncate(&mut env);
    assert!(n >= 1);
    assert_eq!(sal.chain().len(), before - n);
    for id in sal.chain() {
        let r = env.ls.plog(*id).unwrap().lsns.unwrap();
        assert!(r.last >= Lsn(4));
    }
    assert!(sal.log_start() < Lsn(4));
    // Every record above db persistent is still in the log.
    for l in 4..=8u64 {
        assert_eq!(env.ls.copies_of(Lsn(l)), 3);
    }
}

#[test]
fn append_rolls_over_to_new_plog_on_failure() {
    let (mut env, mut sal) = setup();
    sal.write_group(&mut env, vec![put(1, 1)]).unwrap();
    let first = sal.chain()[0];
    let victim = env.ls.plog(first).unwrap().replicas[0].clone();
    env.down.insert(victim.clone());
    let l = sal.write_group(&mut env, vec![put(1, 2)]).unwrap();
    assert_eq!(l, Lsn(2));
    assert_eq!(env.ls.plog(first).unwrap().state, PLogState::Sealed);
    let second = *sal.chain().last().unwrap();
    assert_ne!(first, second);
    assert!(!env.ls.plog(second).unwrap().replicas.contains(&victim));
}

#[test]
fn append_with_retry_reports_exhaustion() {
    let (mut env, _) = setup();
    let mut active = None;
    let payload = LogRecord {
        slice: SliceId::new(1, 0),
        page: PageId(0),
        lsn: Lsn(1),
        op: Op::FullImage(vec![1]),
    }
    .encode();
    let mut calls = 0;
    let err = append_with_retry(
        &mut env.ls,
        &mut active,
        &payload,
        4,
        &mut |_| calls += 1,
        &|_| false,
    )
    .unwrap_err();
    assert!(matches!(
        err,
        LogStoreError::InsufficientHealthyNodes { .. }
    ));
    assert_eq!(calls, 4);
}

#[test]
fn persistent_decrease_resends_from_log() {
    let (mut env, mut sal) = setup();
    for i in 0..4 {
        sal.write_group(&mut env, vec![put(1, i)]).unwrap();
    }
    flush_all(&mut env, &mut sal);
    pump(&mut env, &mut sal, &[]);
    let n2 = NodeId::page_store(2);
    let s0 = SliceId::new(1, 0);
    // Replace node 2's copy with an empty one and report.
    env.ps.insert(n2.clone(), {
        let mut p = PageStoreNode::new(n2.clone(), &cfg(), Disk::in_memory());
        p.host_slice(s0);
        p.host_slice(SliceId::new(1, 1));
        p
    });
    let st = env.ps[&n2].status(s0).unwrap();
    sal.on_poll_reply(&mut env, &n2, s0, &st);
    assert_eq!(sal.metrics.mechanism_a, 1);
    pump(&mut env, &mut sal, &[]);
    assert_eq!(env.ps[&n2].persistent_lsn(s0).unwrap(), Lsn(4));
}

#[test]
fn stalled_replica_gets_missing_records_via_poll() {
    let (mut env, mut sal) = setup();
    sal.write_group(&mut env, vec![put(1, 1)]).unwrap();
    flush_all(&mut env, &mut sal);
    let n0 = NodeId::page_store(0);
    pump(&mut env, &mut sal, std::slice::from_ref(&n0));
    sal.write_group(&mut env, vec![put(1, 2)]).unwrap();
    flush_all(&mut env, &mut sal);
    pump(&mut env, &mut sal, &[]);
    let s0 = SliceId::new(1, 0);
    assert_eq!(env.ps[&n0].persistent_lsn(s0).unwrap(), Lsn::NONE);
    // The fragment carrying lsn 1 has already been acknowledged, so no retry.
    for _ in 0..10 {
        sal.poll(&mut env);
        pump(&mut env, &mut sal, &[]);
    }
    assert_eq!(env.ps[&n0].persistent_lsn(s0).unwrap(), Lsn(2));
    assert!(sal.metrics.mechanism_b >= 1);
    assert!(!env.gossips.is_empty());
}

#[test]
fn recovery_resends_only_records_no_replica_has() {
    let (mut env, mut sal) = setup();
    for i in 0..5 {
        sal.write_group(&mut env, vec![put(1, i)]).unwrap();
    }
    flush_all(&mut env, &mut sal);
    pump(&mut env, &mut sal, &[]);
    sal.poll(&mut env);
    pump(&mut env, &mut sal, &[]);
    sal.checkpoint(&mut env);
    // Two more buffers reach the log but never the Page Stores.
    sal.write_group(&mut env, vec![put(1, 9)]).unwrap();
    sal.write_group(&mut env, vec![put(20, 9)]).unwrap();
    drop(sal);
    env.outbox.clear();
    let placement: BTreeMap<SliceId, Vec<NodeId>> = (0..2)
        .map(|i| (SliceId::new(1, i), (0..3).map(NodeId::page_store).collect()))
        .collect();
    let mut sal = Sal::recover(&cfg(), &placement, Vec::new(), 7, &mut env).unwrap();
    assert_eq!(sal.metrics.resent_records, 2);
    assert_eq!(sal.next_lsn(), Lsn(8));
    assert_eq!(sal.cv, Lsn(7));
    pump(&mut env, &mut sal, &[]);
    let s0 = SliceId::new(1, 0);
    for ps in env.ps.values() {
        assert_eq!(ps.persistent_lsn(s0).unwrap(), Lsn(7));
    }
    let (_, img) = sal.read_page_routed(&mut env, PageId(1), None).unwrap();
    assert_eq!(img.bytes[0], 9);
    assert_eq!(sal.write_group(&mut env, vec![put(1, 3)]).unwrap(), Lsn(8));
}

#[test]
fn read_falls_back_and_repairs() {
    let (mut env, mut sal) = setup();
    sal.write_group(&mut env, vec![put(1, 5)]).unwrap();
    flush_all(&mut env, &mut sal);
    let n0 = NodeId::page_store(0);
    pump(&mut env, &mut sal, std::slice::from_ref(&n0));
    env.down.insert(NodeId::page_store(1));
    env.down.insert(NodeId::page_store(2));
    let (_, img) = sal.read_page_routed(&mut env, PageId(1), None).unwrap();
    assert_eq!(img.bytes[0], 5);
    assert_eq!(sal.metrics.read_repairs, 1);
    env.down.insert(n0);
    assert_eq!(
        sal.read_page_routed(&mut env, PageId(1), None).unwrap_err(),
        SalError::SliceUnrecoverable(SliceId::new(1, 0))
    );
}
