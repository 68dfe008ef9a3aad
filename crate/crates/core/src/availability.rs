//! Storage unavailability under independent node failures: closed forms,
//! low-order approximations, Monte Carlo estimates, and a Log Store
//! write-retry trial.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::config::Config;
use crate::logstore::LogStoreCluster;
use crate::record::{LogRecord, Op};
use crate::sal::append_with_retry;
use crate::types::{Lsn, NodeId, PageId, SliceId};

/// Default number of Log Store nodes a write may pick PLog replicas from.
pub const DEFAULT_POOL: usize = 100;

/// Trials per independently seeded Monte Carlo stream.
pub const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct QuorumConfig {
    pub n: u32,
    pub nw: u32,
    pub nr: u32,
}

impl QuorumConfig {
    pub fn new(n: u32, nw: u32, nr: u32) -> Result<Self, String> {
        if n == 0 || nw == 0 || nr == 0 || nw > n || nr > n {
            return Err(format!("invalid quorum ({n},{nw},{nr})"));
        }
        Ok(QuorumConfig { n, nw, nr })
    }

    pub fn strongly_consistent(&self) -> bool {
        self.nr + self.nw > self.n
    }

    /// Fewest failed nodes that block the operation.
    pub fn blocking(&self, op: OpKind) -> u32 {
        match op {
            OpKind::Write => self.n - self.nw + 1,
            OpKind::Read => self.n - self.nr + 1,
        }
    }
}

impl fmt::Display for QuorumConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N={} Nw={} Nr={}", self.n, self.nw, self.nr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OpKind {
    Write,
    Read,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Write => "write",
            OpKind::Read => "read",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scheme {
    Quorum(QuorumConfig),
    /// Three fixed replicas for reads; writes go to any three healthy
    /// nodes out of `pool`.
    Taurus {
        pool: usize,
    },
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Quorum(q) => write!(f, "{q}"),
            Scheme::Taurus { .. } => f.write_str("Taurus"),
        }
    }
}

/// The four rows compared in the availability table.
pub fn table_schemes() -> [Scheme; 4] {
    [
        Scheme::Quorum(QuorumConfig { n: 6, nw: 4, nr: 3 }),
        Scheme::Quorum(QuorumConfig { n: 3, nw: 2, nr: 2 }),
        Scheme::Quorum(QuorumConfig { n: 3, nw: 3, nr: 1 }),
        Scheme::Taurus { pool: DEFAULT_POOL },
    ]
}

pub const TABLE_XS: [f64; 3] = [0.15, 0.05, 0.01];

/// Exact binomial coefficient.
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// P(at least `k` of `n` independent nodes are down).
pub fn p_at_least(n: u32, k: u32, x: f64) -> f64 {
    (k..=n)
        .map(|i| binomial(n, i) as f64 * x.powi(i as i32) * (1.0 - x).powi((n - i) as i32))
        .sum()
}

pub fn p_write_exact(q: QuorumConfig, x: f64) -> f64 {
    p_at_least(q.n, q.blocking(OpKind::Write), x)
}

pub fn p_read_exact(q: QuorumConfig, x: f64) -> f64 {
    p_at_least(q.n, q.blocking(OpKind::Read), x)
}

pub fn p_exact(s: Scheme, op: OpKind, x: f64) -> f64 {
    match (s, op) {
        (Scheme::Quorum(q), OpKind::Write) => p_write_exact(q, x),
        (Scheme::Quorum(q), OpKind::Read) => p_read_exact(q, x),
        // Fewer than three healthy nodes in the pool.
        (Scheme::Taurus { pool }, OpKind::Write) => {
            let m = pool as u32;
            if m < 3 {
                1.0
            } else {
                p_at_least(m, m - 2, x)
            }
        }
        (Scheme::Taurus { .. }, OpKind::Read) => x.powi(3),
    }
}

/// Lowest-order term of the exact sum.
pub fn p_approx(s: Scheme, op: OpKind, x: f64) -> f64 {
    match (s, op) {
        (Scheme::Quorum(q), op) => {
            let k = q.blocking(op);
            binomial(q.n, k) as f64 * x.powi(k as i32)
        }
        (Scheme::Taurus { .. }, OpKind::Write) => 0.0,
        (Scheme::Taurus { .. }, OpKind::Read) => x.powi(3),
    }
}

/// One significant digit, rounding half up: `0.0675` -> `7e-2`.
pub fn sci1(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mut e = v.abs().log10().floor() as i32;
    let m = v.abs() / 10f64.powi(e);
    let mut d = (m + 0.5 + 1e-9).floor();
    if d >= 10.0 {
        d = 1.0;
        e += 1;
    }
    let sign = if v < 0.0 { "-" } else { "" };
    format!("{sign}{d}e{e}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub trials: u64,
    pub failures: u64,
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_counts(failures: u64, trials: u64) -> Self {
        let mean = if trials == 0 {
            0.0
        } else {
            failures as f64 / trials as f64
        };
        let stderr = if trials == 0 {
            0.0
        } else {
            (mean * (1.0 - mean) / trials as f64).sqrt()
        };
        Estimate {
            trials,
            failures,
            mean,
            stderr,
        }
    }

    /// Whether the failure count is within `k` standard errors of a true
    /// probability `p`. The standard error comes from `p` itself (the
    /// sample one is zero whenever no failure is seen) and the count gets
    /// the usual half-trial continuity correction.
    pub fn within(&self, p: f64, k: f64) -> bool {
        let n = self.trials as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        (self.failures as f64 - n * p).abs() <= k * sd + 0.5
    }
}

/// Failures among trials `[chunk*CHUNK, chunk*CHUNK + len)`. Each chunk
/// has its own stream, so any partition of chunks gives the same totals.
pub fn failures_in_chunk(s: Scheme, op: OpKind, x: f64, seed: u64, chunk: u64, len: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let down = |rng: &mut ChaCha8Rng| rng.gen_bool(x.clamp(0.0, 1.0));
    let mut fails = 0;
    match (s, op) {
        (Scheme::Quorum(q), op) => {
            let k = q.blocking(op);
            for _ in 0..len {
                let d = (0..q.n).filter(|_| down(&mut rng)).count() as u32;
                fails += (d >= k) as u64;
            }
        }
        (Scheme::Taurus { pool }, OpKind::Write) => {
            let dist = Binomial::new(pool as u64, x.clamp(0.0, 1.0)).expect("valid p");
            for _ in 0..len {
                let healthy = pool as u64 - dist.sample(&mut rng);
                fails += (healthy < 3) as u64;
            }
        }
        (Scheme::Taurus { .. }, OpKind::Read) => {
            for _ in 0..len {
                let d = (0..3).filter(|_| down(&mut rng)).count();
                fails += (d == 3) as u64;
            }
        }
    }
    fails
}

pub fn monte_carlo(s: Scheme, op: OpKind, x: f64, trials: u64, seed: u64) -> Estimate {
    let mut failures = 0;
    let mut chunk = 0;
    let mut left = trials;
    while left > 0 {
        let len = left.min(CHUNK);
        failures += failures_in_chunk(s, op, x, seed, chunk, len);
        left -= len;
        chunk += 1;
    }
    Estimate::from_counts(failures, trials)
}

#[derive(Debug, Clone)]
pub struct TableCell {
    pub scheme: Scheme,
    pub op: OpKind,
    pub x: f64,
    pub exact: f64,
    pub approx: f64,
    pub mc: Option<Estimate>,
}

/// Every (scheme, op, x) combination; Monte Carlo only when `trials > 0`.
pub fn table(xs: &[f64], trials: u64, seed: u64) -> Vec<TableCell> {
    let mut out = Vec::new();
    for (si, s) in table_schemes().into_iter().enumerate() {
        for op in [OpKind::Write, OpKind::Read] {
            for (xi, &x) in xs.iter().enumerate() {
                let cell_seed = seed ^ ((si as u64) << 40 | (op as u64) << 32 | xi as u64);
                out.push(TableCell {
                    scheme: s,
                    op,
                    x,
                    exact: p_exact(s, op, x),
                    approx: p_approx(s, op, x),
                    mc: (trials > 0).then(|| monte_carlo(s, op, x, trials, cell_seed)),
                });
            }
        }
    }
    out
}

pub fn table_text(cells: &[TableCell]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<22} {:<5} {:>6} {:>12} {:>12} {:>7} {:>12} {:>11}",
        "scheme", "op", "x", "exact", "approx", "~1sig", "mc", "mc_stderr"
    );
    for c in cells {
        let (mc, se) = match c.mc {
            Some(e) => (format!("{:.4e}", e.mean), format!("{:.2e}", e.stderr)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{:<22} {:<5} {:>6} {:>12.4e} {:>12.4e} {:>7} {:>12} {:>11}",
            c.scheme.to_string(),
            c.op.to_string(),
            c.x,
            c.exact,
            c.approx,
            sci1(c.approx),
            mc,
            se
        );
    }
    s
}

pub fn table_csv(cells: &[TableCell]) -> String {
    let mut s = String::from("scheme,op,x,exact,approx,approx_1sig,mc_mean,mc_stderr,mc_trials\n");
    for c in cells {
        let (m, e, t) = match c.mc {
            Some(e) => (
                e.mean.to_string(),
                e.stderr.to_string(),
                e.trials.to_string(),
            ),
            None => (String::new(), String::new(), "0".into()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.scheme,
            c.op,
            c.x,
            c.exact,
            c.approx,
            sci1(c.approx),
            m,
            e,
            t
        );
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WriteTrial {
    pub writes: u64,
    pub failed: u64,
    pub attempts: u64,
    pub plogs_created: u64,
}

/// Appends `writes` log records to a Log Store cluster of `nodes` nodes
/// where every node is independently down with probability `p`, re-drawn
/// before each attempt. Failed appends seal the PLog and retry on a fresh
/// one, up to `max_attempts` per write.
pub fn log_write_trial(
    nodes: usize,
    p: f64,
    writes: u64,
    max_attempts: usize,
    seed: u64,
) -> WriteTrial {
    let cfg = Config {
        log_stores: nodes,
        ..Config::test()
    };
    let mut cluster = LogStoreCluster::new(&cfg, seed);
    let ids = cluster.node_ids();
    let down: RefCell<BTreeSet<NodeId>> = RefCell::new(BTreeSet::new());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6961);
    let mut active = None;
    let mut out = WriteTrial::default();
    for i in 0..writes {
        let payload = LogRecord {
            slice: SliceId::new(1, 0),
            page: PageId(i % 64),
            lsn: Lsn(i + 1),
            op: Op::Delta {
                offset: 0,
                bytes: (i as u32).to_le_bytes().to_vec(),
            },
        }
        .encode();
        let mut tries = 0u64;
        let res = append_with_retry(
            &mut cluster,
            &mut active,
            &payload,
            max_attempts,
            &mut |c| {
                tries += 1;
                let mut d = down.borrow_mut();
                d.clear();
                for n in &ids {
                    if rng.gen_bool(p) {
                        d.insert(n.clone());
                    } else {
                        c.mark_healthy(n);
                    }
                }
            },
            &|n| !down.borrow().contains(n),
        );
        out.writes += 1;
        out.attempts += tries;
        if let Ok(a) = res {
            out.plogs_created += a.created.len() as u64;
        } else {
            out.failed += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_small() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(6, 4), 15);
        assert_eq!(binomial(100, 50), 100891344545564193334812497256);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn sci1_rounds_half_up() {
        assert_eq!(sci1(0.0675), "7e-2");
        assert_eq!(sci1(0.45), "5e-1");
        assert_eq!(sci1(9.375e-5), "9e-5");
        assert_eq!(sci1(9.6e-5), "1e-4");
        assert_eq!(sci1(15.0 * 0.01f64.powi(4)), "2e-7");
        assert_eq!(sci1(0.0), "0");
    }

    #[test]
    fn partition_independent() {
        let s = table_schemes()[0];
        let whole = monte_carlo(s, OpKind::Write, 0.15, 3 * CHUNK, 5).failures;
        let parts: u64 = [2, 0, 1]
            .iter()
            .map(|&c| failures_in_chunk(s, OpKind::Write, 0.15, 5, c, CHUNK))
            .sum();
        assert_eq!(whole, parts);
    }

    #[test]
    fn quorum_validation() {
        assert!(QuorumConfig::new(3, 4, 1).is_err());
        assert!(QuorumConfig::new(3, 0, 1).is_err());
        assert!(!QuorumConfig::new(3, 1, 1).unwrap().strongly_consistent());
    }

    #[test]
    fn small_write_trial_succeeds() {
        let r = log_write_trial(20, 0.15, 500, 1000, 1);
        assert_eq!(r.failed, 0);
        assert!(r.attempts > r.writes);
    }
}
