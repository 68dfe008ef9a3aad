//! Page Store: receives per-slice log fragments, keeps a Log Directory over
//! an append-only slice log, consolidates records into page versions and
//! serves versioned page reads.

pub mod cache;
pub mod coverage;
pub mod pool;
pub mod slicelog;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::config::{Config, ConsolidationPolicy};
use crate::disk::Disk;
use crate::record::{apply_in_place, LogFragment, LogRecord, PageImage};
use crate::types::{Lsn, LsnRange, NodeId, PageId, SliceId};

use cache::{FragKey, LogCache};
pub use coverage::Coverage;
use pool::BufferPool;
use slicelog::{record_in_block, scan, Block};

/// Entries with keys in `(after, through]`.
fn between<V>(m: &BTreeMap<Lsn, V>, after: Lsn, through: Lsn) -> impl Iterator<Item = (&Lsn, &V)> {
    (after < through)
        .then(|| m.range(after.next()..=through))
        .into_iter()
        .flatten()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PageStoreError {
    #[error("slice {0} not hosted here")]
    UnknownSlice(SliceId),
    #[error("requested lsn {requested} beyond persistent lsn {persistent}")]
    NotCaughtUp { requested: Lsn, persistent: Lsn },
    #[error("requested lsn {requested} below recycle floor {floor}")]
    BelowRecycleLsn { requested: Lsn, floor: Lsn },
    #[error("recycle lsn {requested} below current {current}")]
    RecycleLsnRegression { current: Lsn, requested: Lsn },
    #[error("slice {0} is still being rebuilt")]
    Rebuilding(SliceId),
    #[error("malformed fragment for slice {0}")]
    MalformedFragment(SliceId),
    #[error("copy source unavailable")]
    SourceUnavailable,
    #[error("gossip peer unavailable")]
    PeerUnavailable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLoc {
    pub offset: u64,
    pub len: u32,
}

/// Log Directory entries for one page.
#[derive(Debug, Clone, Default)]
pub struct PageDir {
    /// Record LSN -> fragment block holding it.
    pub records: BTreeMap<Lsn, BlockLoc>,
    /// Version LSN -> page block; `None` while the version lives only in
    /// the buffer pool.
    pub versions: BTreeMap<Lsn, Option<BlockLoc>>,
}

impl PageDir {
    pub fn latest_version(&self) -> Lsn {
        self.versions
            .keys()
            .next_back()
            .copied()
            .unwrap_or(Lsn::NONE)
    }
}

#[derive(Debug, Clone)]
pub struct SliceState {
    pub slice: SliceId,
    file: String,
    coverage: Coverage,
    baseline: Lsn,
    floor: Lsn,
    recycle: Lsn,
    gc_floor: Lsn,
    purged_through: Lsn,
    last_seq: u64,
    ready: bool,
    dir: BTreeMap<PageId, PageDir>,
    index: BTreeMap<Lsn, PageId>,
}

impl SliceState {
    fn new(slice: SliceId, file: String, ready: bool) -> Self {
        SliceState {
            slice,
            file,
            coverage: Coverage::new(),
            baseline: Lsn::NONE,
            floor: Lsn::NONE,
            recycle: Lsn::NONE,
            gc_floor: Lsn::NONE,
            purged_through: Lsn::NONE,
            last_seq: 0,
            ready,
            dir: BTreeMap::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn persistent(&self) -> Lsn {
        self.coverage.prefix_end()
    }

    fn refresh_floor(&mut self) {
        let m = self.recycle.min(self.persistent());
        if let Some((&l, _)) = self.index.range(..=m).next_back() {
            self.floor = self.floor.max(l);
        }
    }

    fn entries(&self) -> usize {
        self.dir
            .values()
            .map(|d| d.records.len() + d.versions.len())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteAck {
    pub slice: SliceId,
    pub sequence: u64,
    /// Coverage end of the acknowledged fragment.
    pub through: Lsn,
    pub persistent: Lsn,
    pub ready: bool,
    pub throttle: bool,
    /// False when the fragment was a pure duplicate.
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceStatus {
    pub persistent: Lsn,
    pub last_seq: u64,
    pub ready: bool,
    pub max_through: Lsn,
    pub gaps: Vec<LsnRange>,
}

#[derive(Debug, Clone)]
pub struct GossipDigest {
    pub slice: SliceId,
    pub persistent: Lsn,
    pub gaps: Vec<LsnRange>,
    pub coverage: Coverage,
}

/// Latest page versions of a slice as of the source's persistent LSN.
#[derive(Debug, Clone)]
pub struct SliceCopy {
    pub slice: SliceId,
    pub as_of: Lsn,
    pub pages: Vec<PageImage>,
}

#[derive(Debug, Clone, Default)]
pub struct PageStoreMetrics {
    pub fragments_received: u64,
    pub duplicate_fragments: u64,
    /// Record payloads read from disk by consolidation.
    pub disk_record_reads: u64,
    pub read_path_record_reads: u64,
    pub gossip_record_reads: u64,
    pub page_disk_reads: u64,
    pub pages_consolidated: u64,
    pub pages_flushed: u64,
    pub gossip_records_sent: u64,
    pub gossip_records_received: u64,
    pub reads_served: u64,
}

#[derive(Clone, Copy)]
enum Purpose {
    Consolidate,
    Read,
    Gossip,
}

#[derive(Debug)]
pub struct PageStoreNode {
    pub id: NodeId,
    page_size: usize,
    policy: ConsolidationPolicy,
    pages_per_step: usize,
    throttle_high_water: usize,
    cache_capacity: usize,
    disk: Disk,
    slices: BTreeMap<SliceId, SliceState>,
    cache: LogCache,
    pool: BufferPool,
    pub metrics: PageStoreMetrics,
}

impl PageStoreNode {
    pub fn new(id: NodeId, cfg: &Config, disk: Disk) -> Self {
        PageStoreNode {
            id,
            page_size: cfg.page_size,
            policy: cfg.consolidation,
            pages_per_step: cfg.consolidate_pages_per_step,
            throttle_high_water: cfg.throttle_high_water,
            cache_capacity: cfg.log_cache_fragments,
            disk,
            slices: BTreeMap::new(),
            cache: LogCache::new(cfg.log_cache_fragments),
            pool: BufferPool::new(
                cfg.buffer_pool_pages,
                cfg.pool_policy,
                cfg.lfu_aging_accesses,
            ),
            metrics: PageStoreMetrics::default(),
        }
    }

    fn file_for(&self, slice: SliceId) -> String {
        format!("{}/{}_{}.slog", self.id, slice.db.0, slice.index)
    }

    /// Hosts a slice from the start of the database's life.
    pub fn host_slice(&mut self, slice: SliceId) {
        self.open_slice(slice, false);
    }

    /// Hosts a slice as a replacement replica: writes are accepted at once,
    /// reads only after [`install_copy`](Self::install_copy).
    pub fn assign_replacement(&mut self, slice: SliceId) {
        self.open_slice(slice, true);
    }

    fn open_slice(&mut self, slice: SliceId, replacement: bool) {
        if self.slices.contains_key(&slice) {
            return;
        }
        let file = self.file_for(slice);
        self.disk
            .append(&file, &Block::Assign { replacement }.encode());
        self.slices
            .insert(slice, SliceState::new(slice, file, !replacement));
    }

    pub fn hosts(&self, slice: SliceId) -> bool {
        self.slices.contains_key(&slice)
    }

    pub fn slice_ids(&self) -> Vec<SliceId> {
        self.slices.keys().copied().collect()
    }

    pub fn slice(&self, slice: SliceId) -> Option<&SliceState> {
        self.slices.get(&slice)
    }

    fn state(&self, slice: SliceId) -> Result<&SliceState, PageStoreError> {
        self.slices
            .get(&slice)
            .ok_or(PageStoreError::UnknownSlice(slice))
    }

    pub fn disk(&self) -> &Disk {
        &self.disk
    }

    pub fn pool(&self) -> &BufferPool {
        &self.pool
    }

    pub fn log_cache_spills(&self) -> u64 {
        self.cache.spills
    }

    pub fn log_cache_reloads(&self) -> u64 {
        self.cache.reloads
    }

    pub fn log_cache_overflow(&self) -> usize {
        self.cache.overflow_len()
    }

    pub fn log_cache_resident(&self) -> usize {
        self.cache.resident_len()
    }

    pub fn directory_entries(&self) -> usize {
        self.slices.values().map(|s| s.entries()).sum()
    }

    pub fn write_logs(&mut self, frag: &LogFragment) -> Result<WriteAck, PageStoreError> {
        let throttle = self.directory_entries() > self.throttle_high_water;
        let st = self
            .slices
            .get_mut(&frag.slice)
            .ok_or(PageStoreError::UnknownSlice(frag.slice))?;
        if !frag.is_well_formed() {
            return Err(PageStoreError::MalformedFragment(frag.slice));
        }
        self.metrics.fragments_received += 1;
        st.last_seq = st.last_seq.max(frag.sequence);
        let fresh: Vec<LogRecord> = frag
            .records
            .iter()
            .filter(|r| !st.coverage.contains(r.lsn))
            .cloned()
            .collect();
        let widens = !st.coverage.covers(frag.covers_after, frag.covers_through);
        if fresh.is_empty() && !widens {
            self.metrics.duplicate_fragments += 1;
            return Ok(WriteAck {
                slice: frag.slice,
                sequence: frag.sequence,
                through: frag.covers_through,
                persistent: st.persistent(),
                ready: st.ready,
                throttle,
                applied: false,
            });
        }
        let block = Block::Fragment {
            sequence: frag.sequence,
            covers_after: frag.covers_after,
            covers_through: frag.covers_through,
            group_ends: frag.group_ends.iter().copied().collect(),
            records: fresh.clone(),
        }
        .encode();
        let offset = self.disk.append(&st.file, &block);
        let loc = BlockLoc {
            offset,
            len: block.len() as u32,
        };
        for r in &fresh {
            st.dir.entry(r.page).or_default().records.insert(r.lsn, loc);
            st.index.insert(r.lsn, r.page);
        }
        st.coverage.insert(frag.covers_after, frag.covers_through);
        st.refresh_floor();
        let ack = WriteAck {
            slice: frag.slice,
            sequence: frag.sequence,
            through: frag.covers_through,
            persistent: st.persistent(),
            ready: st.ready,
            throttle,
            applied: true,
        };
        let key = (frag.slice, offset);
        match self.policy {
            ConsolidationPolicy::LogCacheCentric => {
                if !self.cache.is_full() && self.cache.overflow_len() == 0 {
                    self.cache.admit(key, fresh);
                } else if !fresh.is_empty() {
                    self.cache.spill(key, loc.len);
                }
            }
            ConsolidationPolicy::LongestChainFirst => {
                self.cache.admit(key, fresh);
                while self.cache.resident_len() > self.cache_capacity {
                    self.cache.evict_oldest();
                    self.cache.spills += 1;
                }
            }
        }
        Ok(ack)
    }

    pub fn persistent_lsn(&self, slice: SliceId) -> Result<Lsn, PageStoreError> {
        Ok(self.state(slice)?.persistent())
    }

    pub fn gap_ranges(&self, slice: SliceId) -> Result<Vec<LsnRange>, PageStoreError> {
        Ok(self.state(slice)?.coverage.gaps())
    }

    pub fn status(&self, slice: SliceId) -> Result<SliceStatus, PageStoreError> {
        let st = self.state(slice)?;
        Ok(SliceStatus {
            persistent: st.persistent(),
            last_seq: st.last_seq,
            ready: st.ready,
            max_through: st.coverage.max_through(),
            gaps: st.coverage.gaps(),
        })
    }

    pub fn recycle_lsn(&self, slice: SliceId) -> Result<Lsn, PageStoreError> {
        Ok(self.state(slice)?.recycle)
    }

    /// Lowest LSN this replica will serve for the slice.
    pub fn read_floor(&self, slice: SliceId) -> Result<Lsn, PageStoreError> {
        Ok(self.state(slice)?.floor)
    }

    pub fn set_recycle_lsn(&mut self, slice: SliceId, lsn: Lsn) -> Result<(), PageStoreError> {
        let st = self
            .slices
            .get_mut(&slice)
            .ok_or(PageStoreError::UnknownSlice(slice))?;
        if lsn < st.recycle {
            return Err(PageStoreError::RecycleLsnRegression {
                current: st.recycle,
                requested: lsn,
            });
        }
        if lsn > st.recycle {
            self.disk
                .append(&st.file, &Block::RecycleMark(lsn).encode());
            st.recycle = lsn;
            st.refresh_floor();
            Self::gc(st);
        }
        Ok(())
    }

    /// Drops page versions superseded by an on-disk version at or below
    /// the floor, and records already folded into that version.
    fn gc(st: &mut SliceState) {
        if st.floor <= st.gc_floor {
            return;
        }
        st.gc_floor = st.floor;
        let floor = st.floor;
        for (page, pd) in st.dir.iter_mut() {
            let b = pd
                .versions
                .range(..=floor)
                .rev()
                .find(|(_, loc)| loc.is_some())
                .map(|(l, _)| *l);
            let Some(b) = b else { continue };
            pd.versions = pd.versions.split_off(&b);
            let kept = pd.records.split_off(&b.next());
            for l in pd.records.keys() {
                if st.index.get(l) == Some(page) {
                    st.index.remove(l);
                }
            }
            pd.records = kept;
            st.purged_through = st.purged_through.max(b);
        }
    }

    fn fetch_record(
        &mut self,
        slice: SliceId,
        page: PageId,
        lsn: Lsn,
        purpose: Purpose,
    ) -> LogRecord {
        let st = &self.slices[&slice];
        let loc = st.dir[&page].records[&lsn];
        if let Some(r) = self.cache.get(&(slice, loc.offset), lsn) {
            return r.clone();
        }
        let bytes = self
            .disk
            .read(&st.file, loc.offset, loc.len as usize)
            .expect("directory points inside slice log");
        match purpose {
            Purpose::Consolidate => self.metrics.disk_record_reads += 1,
            Purpose::Read => self.metrics.read_path_record_reads += 1,
            Purpose::Gossip => self.metrics.gossip_record_reads += 1,
        }
        record_in_block(&bytes, lsn).expect("slice log block intact")
    }

    /// Loads a specific version as a base image, counting pool hits and misses.
    fn load_version(&mut self, slice: SliceId, page: PageId, version: Lsn) -> (PageImage, bool) {
        if let Some(img) = self.pool.get(&(slice, page), version) {
            return (img, false);
        }
        if version.is_none() {
            return (PageImage::zeroed(page, self.page_size), false);
        }
        let st = &self.slices[&slice];
        let loc = st.dir[&page].versions[&version].expect("pool-only version is resident");
        let bytes = self
            .disk
            .read(&st.file, loc.offset, loc.len as usize)
            .expect("version block inside slice log");
        self.metrics.page_disk_reads += 1;
        match Block::decode(&bytes) {
            Some((
                Block::Page {
                    page: p,
                    version: v,
                    bytes,
                },
                _,
            )) => (
                PageImage {
                    page: p,
                    version: v,
                    bytes,
                },
                true,
            ),
            _ => panic!("version entry does not point at a page block"),
        }
    }

    fn flush_image(&mut self, slice: SliceId, image: &PageImage) {
        let Some(st) = self.slices.get_mut(&slice) else {
            return;
        };
        let block = Block::Page {
            page: image.page,
            version: image.version,
            bytes: image.bytes.clone(),
        }
        .encode();
        let offset = self.disk.append(&st.file, &block);
        if let Some(pd) = st.dir.get_mut(&image.page) {
            if pd.versions.contains_key(&image.version) {
                pd.versions.insert(
                    image.version,
                    Some(BlockLoc {
                        offset,
                        len: block.len() as u32,
                    }),
                );
            }
        }
        self.metrics.pages_flushed += 1;
    }

    fn pool_insert(&mut self, slice: SliceId, image: PageImage, dirty: bool) {
        if let Some(((s, _), evicted)) = self.pool.insert((slice, image.page), image, dirty) {
            if evicted.dirty {
                self.flush_image(s, &evicted.image);
            }
        }
    }

    pub fn read_page(
        &mut self,
        slice: SliceId,
        page: PageId,
        lsn: Lsn,
    ) -> Result<PageImage, PageStoreError> {
        let st = self
            .slices
            .get(&slice)
            .ok_or(PageStoreError::UnknownSlice(slice))?;
        if !st.ready {
            return Err(PageStoreError::Rebuilding(slice));
        }
        if lsn > st.persistent() {
            return Err(PageStoreError::NotCaughtUp {
                requested: lsn,
                persistent: st.persistent(),
            });
        }
        if lsn < st.floor {
            return Err(PageStoreError::BelowRecycleLsn {
                requested: lsn,
                floor: st.floor,
            });
        }
        self.metrics.reads_served += 1;
        let Some(pd) = st.dir.get(&page) else {
            return Ok(PageImage::zeroed(page, self.page_size));
        };
        let base_v = pd
            .versions
            .range(..=lsn)
            .next_back()
            .map(|(l, _)| *l)
            .unwrap_or(Lsn::NONE);
        let latest = pd.latest_version();
        let pending: Vec<Lsn> = between(&pd.records, base_v, lsn).map(|(l, _)| *l).collect();
        let (mut img, from_disk) = self.load_version(slice, page, base_v);
        if from_disk && base_v == latest {
            self.pool_insert(slice, img.clone(), false);
        }
        for l in pending {
            let r = self.fetch_record(slice, page, l, Purpose::Read);
            apply_in_place(&mut img, &r).expect("stored records apply in order");
        }
        Ok(img)
    }

    /// One scheduled consolidation step; returns pages consolidated.
    pub fn consolidate_step(&mut self) -> usize {
        let mut done = 0;
        match self.policy {
            ConsolidationPolicy::LogCacheCentric => {
                self.reload_overflow(false);
                for key in self.cache.arrival_order() {
                    if done >= self.pages_per_step {
                        break;
                    }
                    let Some(frag) = self.cache.fragment(&key) else {
                        continue;
                    };
                    let slice = key.0;
                    let Some(st) = self.slices.get(&slice) else {
                        continue;
                    };
                    if !st.ready {
                        continue;
                    }
                    let persistent = st.persistent();
                    let pages: BTreeSet<PageId> = frag
                        .records
                        .values()
                        .filter(|r| r.lsn <= persistent)
                        .map(|r| r.page)
                        .collect();
                    for page in pages {
                        if done >= self.pages_per_step {
                            break;
                        }
                        if self.consolidate_page(slice, page, true) {
                            done += 1;
                        }
                    }
                }
                if done == 0 && self.cache.overflow_len() > 0 {
                    self.reload_overflow(true);
                }
            }
            ConsolidationPolicy::LongestChainFirst => {
                let mut chains: Vec<(usize, SliceId, PageId)> = Vec::new();
                for (sid, st) in &self.slices {
                    if !st.ready {
                        continue;
                    }
                    let p = st.persistent();
                    for (page, pd) in &st.dir {
                        let n = between(&pd.records, pd.latest_version(), p).count();
                        if n > 0 {
                            chains.push((n, *sid, *page));
                        }
                    }
                }
                chains.sort_by(|a, b| b.0.cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
                for (_, slice, page) in chains.into_iter().take(self.pages_per_step) {
                    if self.consolidate_page(slice, page, false) {
                        done += 1;
                    }
                }
            }
        }
        for st in self.slices.values_mut() {
            st.refresh_floor();
            Self::gc(st);
        }
        done
    }

    fn reload_overflow(&mut self, force: bool) {
        let mut forced = force;
        while let Some((key, len)) = self.cache.overflow_front() {
            if self.cache.is_full() && !forced {
                break;
            }
            forced = false;
            self.cache.pop_overflow();
            let Some(st) = self.slices.get(&key.0) else {
                continue;
            };
            let Some(bytes) = self.disk.read(&st.file, key.1, len as usize) else {
                continue;
            };
            self.cache.reloads += 1;
            if let Some((Block::Fragment { records, .. }, _)) = Block::decode(&bytes) {
                let live: Vec<LogRecord> = records
                    .into_iter()
                    .filter(|r| {
                        st.dir.get(&r.page).is_some_and(|pd| {
                            r.lsn > pd.latest_version() && pd.records.contains_key(&r.lsn)
                        })
                    })
                    .collect();
                self.cache.admit(key, live);
            }
        }
    }

    fn consolidate_page(&mut self, slice: SliceId, page: PageId, cache_only: bool) -> bool {
        let st = &self.slices[&slice];
        let Some(pd) = st.dir.get(&page) else {
            return false;
        };
        let latest = pd.latest_version();
        let pending: Vec<(Lsn, BlockLoc)> = pd
            .records
            .range(latest.next()..=st.persistent().max(latest))
            .map(|(l, loc)| (*l, *loc))
            .collect();
        if pending.is_empty() {
            return false;
        }
        if cache_only
            && !pending
                .iter()
                .all(|(l, loc)| self.cache.get(&(slice, loc.offset), *l).is_some())
        {
            return false;
        }
        let latest_loc = pd.versions.get(&latest).copied().flatten();
        let (mut img, _) = self.load_version(slice, page, latest);
        for (l, _) in &pending {
            let r = self.fetch_record(slice, page, *l, Purpose::Consolidate);
            apply_in_place(&mut img, &r).expect("stored records apply in order");
        }
        let new_version = img.version;
        {
            let pd = self
                .slices
                .get_mut(&slice)
                .and_then(|s| s.dir.get_mut(&page))
                .expect("page present");
            if !latest.is_none() && latest_loc.is_none() {
                pd.versions.remove(&latest);
            }
            pd.versions.insert(new_version, None);
        }
        for (l, loc) in &pending {
            self.cache.consume(&(slice, loc.offset), *l);
        }
        self.pool_insert(slice, img, true);
        self.metrics.pages_consolidated += 1;
        true
    }

    pub fn flush_dirty_pages(&mut self) -> usize {
        let keys = self.pool.dirty_keys();
        for key in &keys {
            let img = self
                .pool
                .peek(key)
                .expect("dirty key resident")
                .image
                .clone();
            self.flush_image(key.0, &img);
            self.pool.mark_clean(key);
        }
        keys.len()
    }

    pub fn gossip_digest(&self, slice: SliceId) -> Result<GossipDigest, PageStoreError> {
        let st = self.state(slice)?;
        Ok(GossipDigest {
            slice,
            persistent: st.persistent(),
            gaps: st.coverage.gaps(),
            coverage: st.coverage.clone(),
        })
    }

    /// Builds fill fragments with records the peer lacks and this replica
    /// can supply from its own log.
    pub fn gossip_supply(
        &mut self,
        peer: &GossipDigest,
    ) -> Result<Vec<LogFragment>, PageStoreError> {
        let slice = peer.slice;
        let st = self.state(slice)?;
        let top = st.coverage.max_through();
        let low = st.baseline.max(st.purged_through);
        let mine = st.coverage.clip(low, top);
        let missing = Coverage::from_intervals(peer.coverage.missing_within(Lsn::NONE, top));
        let give = mine.intersect(&missing);
        let mut plan = Vec::new();
        for (a, t) in give.intervals() {
            let recs: Vec<(Lsn, PageId)> = st
                .index
                .range(a.next()..=t)
                .map(|(l, p)| (*l, *p))
                .collect();
            plan.push((a, t, recs));
        }
        let mut out = Vec::new();
        for (a, t, recs) in plan {
            let records: Vec<LogRecord> = recs
                .into_iter()
                .map(|(l, p)| self.fetch_record(slice, p, l, Purpose::Gossip))
                .collect();
            self.metrics.gossip_records_sent += records.len() as u64;
            out.push(LogFragment {
                slice,
                sequence: 0,
                records,
                group_ends: BTreeSet::new(),
                covers_after: a,
                covers_through: t,
            });
        }
        Ok(out)
    }

    /// Applies gossip fills from a peer; returns records newly received.
    pub fn gossip_receive(&mut self, fills: &[LogFragment]) -> Result<usize, PageStoreError> {
        let mut n = 0;
        for f in fills {
            let before = self.state(f.slice)?.index.len();
            self.write_logs(f)?;
            n += self.state(f.slice)?.index.len() - before;
        }
        self.metrics.gossip_records_received += n as u64;
        Ok(n)
    }

    pub fn export_copy(&mut self, slice: SliceId) -> Result<SliceCopy, PageStoreError> {
        let st = self.state(slice)?;
        if !st.ready {
            return Err(PageStoreError::SourceUnavailable);
        }
        let as_of = st.persistent();
        let pages: Vec<PageId> = st.dir.keys().copied().collect();
        let mut out = Vec::new();
        for p in pages {
            let img = self.read_page(slice, p, as_of)?;
            if !img.version.is_none() {
                out.push(img);
            }
        }
        Ok(SliceCopy {
            slice,
            as_of,
            pages: out,
        })
    }

    pub fn install_copy(&mut self, copy: &SliceCopy) -> Result<(), PageStoreError> {
        let st = self
            .slices
            .get_mut(&copy.slice)
            .ok_or(PageStoreError::UnknownSlice(copy.slice))?;
        if st.ready {
            return Ok(());
        }
        let mut floor = Lsn::NONE;
        for img in &copy.pages {
            let block = Block::Page {
                page: img.page,
                version: img.version,
                bytes: img.bytes.clone(),
            }
            .encode();
            let offset = self.disk.append(&st.file, &block);
            st.dir.entry(img.page).or_default().versions.insert(
                img.version,
                Some(BlockLoc {
                    offset,
                    len: block.len() as u32,
                }),
            );
            floor = floor.max(img.version);
        }
        self.disk.append(
            &st.file,
            &Block::Baseline {
                lsn: copy.as_of,
                floor,
            }
            .encode(),
        );
        Self::apply_baseline(st, copy.as_of, floor);
        let (slice, as_of) = (copy.slice, copy.as_of);
        self.cache
            .drop_records(|k, r| k.0 == slice && r.lsn <= as_of);
        Ok(())
    }

    fn apply_baseline(st: &mut SliceState, as_of: Lsn, floor: Lsn) {
        st.coverage.insert(Lsn::NONE, as_of);
        st.baseline = st.baseline.max(as_of);
        st.floor = st.floor.max(floor);
        st.ready = true;
    }

    /// Loses everything in memory and rebuilds the directory from the slice
    /// logs on disk.
    pub fn crash(&mut self) {
        self.cache.clear();
        self.pool.clear();
        self.slices.clear();
        self.rebuild();
    }

    fn rebuild(&mut self) {
        let prefix = format!("{}/", self.id);
        let files: Vec<String> = self
            .disk
            .file_names()
            .filter(|f| f.starts_with(&prefix) && f.ends_with(".slog"))
            .map(String::from)
            .collect();
        let mut requeue: Vec<(Lsn, FragKey, u32)> = Vec::new();
        for file in files {
            let stem = &file[prefix.len()..file.len() - ".slog".len()];
            let Some((db, idx)) = stem.split_once('_') else {
                continue;
            };
            let (Ok(db), Ok(idx)) = (db.parse(), idx.parse()) else {
                continue;
            };
            let slice = SliceId::new(db, idx);
            let bytes = self.disk.contents(&file).expect("listed file exists");
            let mut st = SliceState::new(slice, file.clone(), true);
            let mut frags = Vec::new();
            for (offset, len, block) in scan(bytes) {
                let loc = BlockLoc { offset, len };
                match block {
                    Block::Assign { replacement } => st.ready = !replacement,
                    Block::Fragment {
                        sequence,
                        covers_after,
                        covers_through,
                        records,
                        ..
                    } => {
                        st.last_seq = st.last_seq.max(sequence);
                        for r in &records {
                            st.dir.entry(r.page).or_default().records.insert(r.lsn, loc);
                            st.index.insert(r.lsn, r.page);
                        }
                        st.coverage.insert(covers_after, covers_through);
                        frags.push((loc, records));
                    }
                    Block::Page { page, version, .. } => {
                        st.dir
                            .entry(page)
                            .or_default()
                            .versions
                            .insert(version, Some(loc));
                    }
                    Block::RecycleMark(l) => st.recycle = st.recycle.max(l),
                    Block::Baseline { lsn, floor } => Self::apply_baseline(&mut st, lsn, floor),
                }
            }
            st.refresh_floor();
            Self::gc(&mut st);
            for (loc, records) in frags {
                let pending = records.iter().filter(|r| {
                    st.dir.get(&r.page).is_some_and(|pd| {
                        r.lsn > pd.latest_version() && pd.records.contains_key(&r.lsn)
                    })
                });
                if let Some(first) = pending.map(|r| r.lsn).min() {
                    requeue.push((first, (slice, loc.offset), loc.len));
                }
            }
            self.slices.insert(slice, st);
        }
        requeue.sort();
        for (_, key, len) in requeue {
            self.cache.requeue(key, len);
        }
        if self.policy == ConsolidationPolicy::LongestChainFirst {
            // Spilled fragments are simply disk-resident under this policy.
            while self.cache.pop_overflow().is_some() {}
        } else {
            self.reload_overflow(false);
        }
    }

    /// Durable coverage of `(page, lsn)`: a record entry at `lsn` or any
    /// version at or above it.
    pub fn covers_record(&self, slice: SliceId, page: PageId, lsn: Lsn) -> bool {
        self.slices
            .get(&slice)
            .and_then(|st| st.dir.get(&page))
            .is_some_and(|pd| {
                pd.records.contains_key(&lsn) || pd.versions.range(lsn..).next().is_some()
            })
    }

    pub fn has_record(&self, slice: SliceId, lsn: Lsn) -> bool {
        self.slices
            .get(&slice)
            .is_some_and(|st| st.index.contains_key(&lsn))
    }

    pub fn record_lsns(&self, slice: SliceId) -> Vec<Lsn> {
        self.slices
            .get(&slice)
            .map(|st| st.index.keys().copied().collect())
            .unwrap_or_default()
    }

    /// Pages with any directory entry in the slice.
    pub fn pages(&self, slice: SliceId) -> Vec<PageId> {
        self.slices
            .get(&slice)
            .map(|st| st.dir.keys().copied().collect())
            .unwrap_or_default()
    }

    pub fn coverage(&self, slice: SliceId) -> Option<&Coverage> {
        self.slices.get(&slice).map(|s| &s.coverage)
    }

    pub fn baseline(&self, slice: SliceId) -> Lsn {
        self.slices
            .get(&slice)
            .map(|s| s.baseline)
            .unwrap_or(Lsn::NONE)
    }
}
