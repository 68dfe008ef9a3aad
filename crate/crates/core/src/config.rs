//! Tunables. Every timeout and size the services use is resolved here from
//! one of two scale profiles.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleProfile {
    Production,
    Test,
}

impl FromStr for ScaleProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prod" | "production" | "prod-constants" => Ok(ScaleProfile::Production),
            "test" | "test-constants" => Ok(ScaleProfile::Test),
            other => Err(format!("unknown scale profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsolidationPolicy {
    #[default]
    LogCacheCentric,
    LongestChainFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolPolicy {
    #[default]
    Lfu,
    Lru,
}

impl FromStr for PoolPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lfu" => Ok(PoolPolicy::Lfu),
            "lru" => Ok(PoolPolicy::Lru),
            other => Err(format!("unknown pool policy `{other}`")),
        }
    }
}

impl fmt::Display for PoolPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PoolPolicy::Lfu => "lfu",
            PoolPolicy::Lru => "lru",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    // topology
    pub db: u32,
    pub slices: u32,
    pub pages_per_slice: u64,
    pub log_stores: usize,
    pub page_stores: usize,
    pub read_replicas: usize,
    pub replication: usize,

    // core
    pub page_size: usize,

    // log store
    pub plog_size_limit: u64,
    pub metadata_plog_size_limit: u64,
    pub fifo_cache_bytes: usize,
    pub append_timeout_ms: u64,
    pub log_write_attempts: usize,

    // page store
    pub log_cache_fragments: usize,
    pub buffer_pool_pages: usize,
    pub pool_policy: PoolPolicy,
    pub lfu_aging_accesses: u64,
    pub consolidation: ConsolidationPolicy,
    pub consolidate_pages_per_step: usize,
    pub consolidate_interval_ms: u64,
    pub throttle_high_water: usize,
    /// How often dirty pool pages are written back.
    pub flush_interval_ms: u64,
    pub gossip_interval_ms: u64,
    pub rebuild_copy_ms: u64,

    // sal
    pub slice_buffer_bytes: usize,
    pub slice_flush_timeout_ms: u64,
    pub fragment_retry_ms: u64,
    pub poll_interval_ms: u64,
    pub staleness_polls: u32,
    pub checkpoint_every_buffers: u64,
    pub latency_ewma_alpha: f64,
    pub throttle_delay_ms: u64,

    // replicas
    pub replica_pump_ms: u64,
    pub replica_pool_pages: usize,

    // simnet
    pub latency_ms: u64,
    pub jitter_ms: u64,
    pub heartbeat_ms: u64,
    pub heartbeat_misses: u32,
    pub long_term_threshold_ms: u64,
    pub audit_every_events: u64,
}

impl Config {
    pub fn for_profile(profile: ScaleProfile) -> Self {
        match profile {
            ScaleProfile::Production => Config::production(),
            ScaleProfile::Test => Config::test(),
        }
    }

    /// Desk-scale defaults used by tests and the bundled scenarios.
    pub fn test() -> Self {
        Config {
            db: 1,
            slices: 4,
            pages_per_slice: 16,
            log_stores: 8,
            page_stores: 6,
            read_replicas: 0,
            replication: 3,
            page_size: 8192,
            plog_size_limit: 64 * 1024,
            metadata_plog_size_limit: 64 * 1024,
            fifo_cache_bytes: 1 << 20,
            append_timeout_ms: 500,
            log_write_attempts: 16,
            log_cache_fragments: 64,
            buffer_pool_pages: 256,
            pool_policy: PoolPolicy::Lfu,
            lfu_aging_accesses: 4096,
            consolidation: ConsolidationPolicy::LogCacheCentric,
            consolidate_pages_per_step: 64,
            consolidate_interval_ms: 5,
            throttle_high_water: 100_000,
            gossip_interval_ms: 10_000,
            rebuild_copy_ms: 50,
            slice_buffer_bytes: 64 * 1024,
            slice_flush_timeout_ms: 10,
            fragment_retry_ms: 100,
            poll_interval_ms: 1_000,
            staleness_polls: 3,
            checkpoint_every_buffers: 16,
            latency_ewma_alpha: 0.2,
            throttle_delay_ms: 5,
            replica_pump_ms: 5,
            replica_pool_pages: 128,
            latency_ms: 1,
            jitter_ms: 1,
            heartbeat_ms: 500,
            heartbeat_misses: 3,
            long_term_threshold_ms: 5_000,
            audit_every_events: 0,
            flush_interval_ms: 5_000,
        }
    }

    /// Production-scale constants (64MB PLogs, 30-minute gossip, 15-minute
    /// long-term failure threshold). Only useful for short scripted runs.
    pub fn production() -> Self {
        Config {
            page_size: 16 * 1024,
            pages_per_slice: 10 * 1024 * 1024 * 1024 / (16 * 1024),
            plog_size_limit: 64 * 1024 * 1024,
            metadata_plog_size_limit: 64 * 1024 * 1024,
            gossip_interval_ms: 30 * 60 * 1000,
            long_term_threshold_ms: 15 * 60 * 1000,
            log_stores: 100,
            ..Config::test()
        }
    }

    pub fn pages(&self) -> u64 {
        self.pages_per_slice * self.slices as u64
    }

    /// Applies a `key=value` override, as used by `CONFIG` scenario lines.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("invalid value `{v}` for `{key}`"))
        }
        match key {
            "slices" => self.slices = num(key, value)?,
            "pages_per_slice" => self.pages_per_slice = num(key, value)?,
            "log_stores" => self.log_stores = num(key, value)?,
            "page_stores" => self.page_stores = num(key, value)?,
            "read_replicas" => self.read_replicas = num(key, value)?,
            "page_size" => self.page_size = num(key, value)?,
            "plog_size_limit" => self.plog_size_limit = num(key, value)?,
            "metadata_plog_size_limit" => self.metadata_plog_size_limit = num(key, value)?,
            "fifo_cache_bytes" => self.fifo_cache_bytes = num(key, value)?,
            "log_cache_fragments" => self.log_cache_fragments = num(key, value)?,
            "buffer_pool_pages" => self.buffer_pool_pages = num(key, value)?,
            "pool_policy" => self.pool_policy = value.parse()?,
            "consolidation" => {
                self.consolidation = match value {
                    "log_cache_centric" | "lcc" => ConsolidationPolicy::LogCacheCentric,
                    "longest_chain_first" | "lcf" => ConsolidationPolicy::LongestChainFirst,
                    other => return Err(format!("unknown consolidation policy `{other}`")),
                }
            }
            "consolidate_pages_per_step" => self.consolidate_pages_per_step = num(key, value)?,
            "consolidate_interval_ms" => self.consolidate_interval_ms = num(key, value)?,
            "throttle_high_water" => self.throttle_high_water = num(key, value)?,
            "gossip_interval_ms" => self.gossip_interval_ms = num(key, value)?,
            "slice_buffer_bytes" => self.slice_buffer_bytes = num(key, value)?,
            "slice_flush_timeout_ms" => self.slice_flush_timeout_ms = num(key, value)?,
            "poll_interval_ms" => self.poll_interval_ms = num(key, value)?,
            "staleness_polls" => self.staleness_polls = num(key, value)?,
            "checkpoint_every_buffers" => self.checkpoint_every_buffers = num(key, value)?,
            "replica_pump_ms" => self.replica_pump_ms = num(key, value)?,
            "latency_ms" => self.latency_ms = num(key, value)?,
            "jitter_ms" => self.jitter_ms = num(key, value)?,
            "long_term_threshold_ms" => self.long_term_threshold_ms = num(key, value)?,
            "audit_every_events" => self.audit_every_events = num(key, value)?,
            "flush_interval_ms" => self.flush_interval_ms = num(key, value)?,
            "rebuild_copy_ms" => self.rebuild_copy_ms = num(key, value)?,
            "heartbeat_ms" => self.heartbeat_ms = num(key, value)?,
            "heartbeat_misses" => self.heartbeat_misses = num(key, value)?,
            "fragment_retry_ms" => self.fragment_retry_ms = num(key, value)?,
            "log_write_attempts" => self.log_write_attempts = num(key, value)?,
            "replica_pool_pages" => self.replica_pool_pages = num(key, value)?,
            "throttle_delay_ms" => self.throttle_delay_ms = num(key, value)?,
            "lfu_aging_accesses" => self.lfu_aging_accesses = num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        Ok(())
    }
}

impl Default for Config {
    fn default() -> Self {
        Config::test()
    }
}
