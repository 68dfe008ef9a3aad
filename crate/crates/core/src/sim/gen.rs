//! Randomized workload and fault schedules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::scenario::{Action, Check, LsnSel, PageSel, Scenario};
use crate::types::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub pages: u64,
    pub slices: u32,
    pub page_stores: usize,
    pub log_stores: usize,
    pub writes: u64,
    pub reads: u64,
    pub duration_ms: u64,
    /// Faults per simulated second.
    pub fault_rate: f64,
    /// Share of writes that open a multi-record group.
    pub group_prob: f64,
    pub short_fault_ms: (u64, u64),
    pub long_fault_ms: (u64, u64),
    /// Share of Page Store / Log Store faults that are long-term.
    pub long_prob: f64,
    pub max_long_faults: u32,
    pub master_fault_prob: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            pages: 64,
            slices: 4,
            page_stores: 6,
            log_stores: 8,
            writes: 10_000,
            reads: 1_000,
            duration_ms: 100_000,
            fault_rate: 0.1,
            group_prob: 0.05,
            short_fault_ms: (200, 3_000),
            long_fault_ms: (8_000, 20_000),
            long_prob: 0.4,
            max_long_faults: 2,
            master_fault_prob: 0.1,
        }
    }
}

impl GenParams {
    /// Parses `key=value` pairs such as `pages=64 dur=60s faultRate=0.1`.
    pub fn parse(text: &str) -> Result<GenParams, String> {
        let mut p = GenParams::default();
        let mut writes_set = false;
        for tok in text.split([' ', ',']).filter(|t| !t.is_empty()) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{tok}`"))?;
            let bad = || format!("invalid value `{v}` for `{k}`");
            match k {
                "pages" => p.pages = v.parse().map_err(|_| bad())?,
                "slices" => p.slices = v.parse().map_err(|_| bad())?,
                "page_stores" | "pageStores" => p.page_stores = v.parse().map_err(|_| bad())?,
                "log_stores" | "logStores" => p.log_stores = v.parse().map_err(|_| bad())?,
                "writes" => {
                    p.writes = v.parse().map_err(|_| bad())?;
                    writes_set = true;
                }
                "reads" => p.reads = v.parse().map_err(|_| bad())?,
                "dur" | "duration" => p.duration_ms = parse_ms(v).ok_or_else(bad)?,
                "faultRate" | "fault_rate" => p.fault_rate = v.parse().map_err(|_| bad())?,
                "writeRate" | "write_rate" => {
                    let r: f64 = v.parse().map_err(|_| bad())?;
                    p.writes = (r * p.duration_ms as f64 / 1000.0) as u64;
                    writes_set = true;
                }
                _ => return Err(format!("unknown generator key `{k}`")),
            }
        }
        if !writes_set {
            p.writes = p.duration_ms / 10;
        }
        if p.pages == 0 || p.slices == 0 {
            return Err("pages and slices must be positive".into());
        }
        Ok(p)
    }

    /// `CONFIG` entries that make the cluster match these parameters.
    pub fn config(&self) -> Vec<(String, String)> {
        let pps = self.pages.div_ceil(self.slices as u64);
        vec![
            ("slices".into(), self.slices.to_string()),
            ("pages_per_slice".into(), pps.to_string()),
            ("page_stores".into(), self.page_stores.to_string()),
            ("log_stores".into(), self.log_stores.to_string()),
            ("page_size".into(), "1024".into()),
        ]
    }
}

fn parse_ms(v: &str) -> Option<u64> {
    if let Some(s) = v.strip_suffix("ms") {
        s.parse().ok()
    } else if let Some(s) = v.strip_suffix('s') {
        s.parse::<u64>().ok().map(|x| x * 1000)
    } else {
        v.parse().ok()
    }
}

/// Builds a scenario: Poisson-spaced writes (some grouped), reads at random
/// valid LSNs, and a Poisson fault schedule of crashes (70%) and partitions
/// (30%). At most one Page Store and one Log Store fault is active at a
/// time, so every record keeps a quorum of healthy copies.
pub fn generate(p: &GenParams, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6765_6e00);
    let mut events: Vec<(u64, Action)> = Vec::new();
    let dur = p.duration_ms.max(1);
    let page_size = 1024usize;

    let mut w = 0;
    while w < p.writes {
        let t = rng.gen_range(1..dur);
        if rng.gen_bool(p.group_prob) && w + 1 < p.writes {
            let n = rng.gen_range(2..=3u64).min(p.writes - w);
            events.push((t, Action::BeginGroup));
            for _ in 0..n {
                events.push((t, write(&mut rng, p.pages, page_size)));
            }
            events.push((t, Action::EndGroup));
            w += n;
        } else {
            events.push((t, write(&mut rng, p.pages, page_size)));
            w += 1;
        }
    }
    for _ in 0..p.reads {
        let t = rng.gen_range(1..dur);
        events.push((
            t,
            Action::Read {
                page: PageSel::Fixed(rng.gen_range(0..p.pages)),
                replica: None,
                lsn: LsnSel::Random,
            },
        ));
    }
    let faults = faults(p, &mut rng);
    // Checks run once every fault has ended and the cluster had time to
    // classify, replace and repair.
    let quiet = faults
        .iter()
        .map(|(t, a)| match a {
            Action::Crash { dur, .. } | Action::Partition { dur, .. } => t + dur,
            _ => *t,
        })
        .max()
        .unwrap_or(0);
    events.extend(faults);
    // Groups must stay contiguous: sort by time only, keeping insertion
    // order within a timestamp.
    events.sort_by_key(|(t, _)| *t);
    let end = (dur + 1).max(quiet + SETTLE_MS);
    for c in [
        Check::Oracle,
        Check::Durability,
        Check::AppendOnly,
        Check::CvMonotone,
    ] {
        events.push((end, Action::Check(c)));
    }
    Scenario {
        config: p.config(),
        events,
    }
}

const SETTLE_MS: u64 = 10_000;

fn write(rng: &mut ChaCha8Rng, pages: u64, page_size: usize) -> Action {
    let len = if rng.gen_bool(0.01) {
        page_size
    } else {
        rng.gen_range(8..=128)
    };
    Action::Write {
        page: PageSel::Fixed(rng.gen_range(0..pages)),
        len,
    }
}

fn faults(p: &GenParams, rng: &mut ChaCha8Rng) -> Vec<(u64, Action)> {
    let mut out = Vec::new();
    if p.fault_rate <= 0.0 {
        return out;
    }
    let gap = Exp::new(p.fault_rate / 1000.0).expect("positive rate");
    let (mut ps_busy, mut ls_busy, mut master_busy) = (0u64, 0u64, 0u64);
    let (mut ps_long, mut ls_long) = (0u32, 0u32);
    let mut t = 0.0f64;
    loop {
        t += gap.sample(rng);
        let at = t as u64;
        if at >= p.duration_ms {
            break;
        }
        let roll: f64 = rng.gen();
        let first = if roll < p.master_fault_prob {
            0
        } else if roll < p.master_fault_prob + (1.0 - p.master_fault_prob) / 2.0 {
            1
        } else {
            2
        };
        // A busy class hands the fault to the next free one.
        let free = |k: usize| at >= [master_busy, ps_busy, ls_busy][k];
        let Some(kind) = (0..3).map(|i| (first + i) % 3).find(|k| free(*k)) else {
            continue;
        };
        let (busy, long_count, node) = match kind {
            0 => (&mut master_busy, None, NodeId::master()),
            1 => (
                &mut ps_busy,
                Some(&mut ps_long),
                NodeId::page_store(rng.gen_range(0..p.page_stores)),
            ),
            _ => (
                &mut ls_busy,
                Some(&mut ls_long),
                NodeId::log_store(rng.gen_range(0..p.log_stores)),
            ),
        };
        let long = match long_count {
            Some(c) if *c < p.max_long_faults && rng.gen_bool(p.long_prob) => {
                *c += 1;
                true
            }
            _ => false,
        };
        let dur = if long {
            rng.gen_range(p.long_fault_ms.0..=p.long_fault_ms.1)
        } else {
            rng.gen_range(p.short_fault_ms.0..=p.short_fault_ms.1)
        };
        // A long Page Store fault keeps the slot busy until its replacement
        // has been rebuilt.
        *busy = at + dur + if long { 2_000 } else { 200 };
        if rng.gen_bool(0.7) || node == NodeId::master() {
            out.push((at, Action::Crash { node, dur }));
        } else {
            out.push((
                at,
                Action::Partition {
                    a: NodeId::master(),
                    b: node,
                    dur,
                },
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic_and_sized() {
        let p = GenParams {
            writes: 500,
            reads: 50,
            duration_ms: 10_000,
            ..GenParams::default()
        };
        let a = generate(&p, 3);
        assert_eq!(a, generate(&p, 3));
        assert_ne!(a, generate(&p, 4));
        let writes = a
            .events
            .iter()
            .filter(|(_, e)| matches!(e, Action::Write { .. }))
            .count();
        assert_eq!(writes, 500);
        assert!(a.events.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn parses_cli_spec() {
        let p = GenParams::parse("pages=64 dur=60s faultRate=0.1").unwrap();
        assert_eq!(p.pages, 64);
        assert_eq!(p.duration_ms, 60_000);
        assert_eq!(p.writes, 6_000);
        assert!(GenParams::parse("bogus=1").is_err());
    }
}
