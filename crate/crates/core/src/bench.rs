//! Buffer pool hit-rate comparison between eviction policies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::config::{Config, PoolPolicy};
use crate::pagestore::pool::BufferPool;
use crate::record::PageImage;
use crate::types::{Lsn, PageId, SliceId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Workload {
    /// Page rank r drawn with probability proportional to r^-s.
    Zipf {
        s: f64,
    },
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    pub pages: u64,
    pub pool_pages: usize,
    pub accesses: u64,
    pub workload: Workload,
    pub aging_accesses: u64,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            pages: 4096,
            pool_pages: 256,
            accesses: 200_000,
            workload: Workload::Zipf { s: 1.1 },
            aging_accesses: Config::test().lfu_aging_accesses,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchResult {
    pub policy: PoolPolicy,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
}

/// Page ids in access order. Ranks are scattered over the id space so that
/// popularity does not line up with key order.
pub fn access_trace(p: &BenchParams, seed: u64) -> Vec<PageId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = p.pages.max(1);
    // Multiplying by an odd constant permutes ids modulo a power of two;
    // fall back to identity otherwise.
    let scatter = |r: u64| {
        if n.is_power_of_two() {
            r.wrapping_mul(0x9e37_79b9_7f4a_7c15) & (n - 1)
        } else {
            r
        }
    };
    let zipf = match p.workload {
        Workload::Zipf { s } => Some(Zipf::new(n, s).expect("valid zipf parameters")),
        Workload::Uniform => None,
    };
    (0..p.accesses)
        .map(|_| {
            let rank = match &zipf {
                Some(z) => z.sample(&mut rng) as u64 - 1,
                None => rng.gen_range(0..n),
            };
            PageId(scatter(rank))
        })
        .collect()
}

/// Replays `trace` through a buffer pool: a miss loads the page.
pub fn replay(trace: &[PageId], p: &BenchParams, policy: PoolPolicy) -> BenchResult {
    let mut pool = BufferPool::new(p.pool_pages, policy, p.aging_accesses);
    let slice = SliceId::new(1, 0);
    for &page in trace {
        let key = (slice, page);
        if pool.get(&key, Lsn(1)).is_none() {
            let img = PageImage {
                page,
                version: Lsn(1),
                bytes: Vec::new(),
            };
            pool.insert(key, img, false);
        }
    }
    BenchResult {
        policy,
        hits: pool.hits,
        misses: pool.misses,
        hit_rate: pool.hit_rate(),
    }
}

/// Runs the same seeded trace against LFU and LRU.
pub fn compare(p: &BenchParams, seed: u64) -> (BenchResult, BenchResult) {
    let trace = access_trace(p, seed);
    (
        replay(&trace, p, PoolPolicy::Lfu),
        replay(&trace, p, PoolPolicy::Lru),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_is_seeded() {
        let p = BenchParams {
            accesses: 100,
            ..BenchParams::default()
        };
        assert_eq!(access_trace(&p, 1), access_trace(&p, 1));
        assert_ne!(access_trace(&p, 1), access_trace(&p, 2));
        assert!(access_trace(&p, 1).iter().all(|pg| pg.0 < p.pages));
    }

    #[test]
    fn zero_pool_never_hits() {
        let p = BenchParams {
            pool_pages: 0,
            accesses: 5_000,
            ..BenchParams::default()
        };
        let (a, b) = compare(&p, 3);
        assert_eq!(a.hit_rate, 0.0);
        assert_eq!(b.hit_rate, 0.0);
    }
}
