//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line
//! (written straight to stderr so it shows without --nocapture) and the test
//! fails if any criterion fails.

use std::collections::BTreeSet;
use std::io::Write;
use std::process::Command;
use std::time::{Duration, Instant};

use taurus_core::availability::{
    log_write_trial, monte_carlo, p_exact, table_schemes, OpKind, TABLE_XS,
};
use taurus_core::config::ConsolidationPolicy;
use taurus_core::disk;
use taurus_core::logstore::FailureClass;
use taurus_core::sim::gen::{self, GenParams};
use taurus_core::sim::{library, Action, Sim};
use taurus_core::types::{Lsn, SliceId};

type Outcome = Result<String, String>;

struct Runner {
    failed: Vec<u32>,
}

impl Runner {
    fn run(&mut self, n: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let mut res = f();
        let took = t.elapsed();
        if res.is_ok() && took > limit {
            res = Err(format!("took {took:.2?}, limit {limit:?}"));
        }
        let line = match &res {
            Ok(d) => format!("criterion {n:>2} {name}: PASS ({d}; {took:.2?})\n"),
            Err(e) => format!("criterion {n:>2} {name}: FAIL ({e}; {took:.2?})\n"),
        };
        let _ = std::io::stderr().write_all(line.as_bytes());
        if res.is_err() {
            self.failed.push(n);
        }
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// `d×10^e` from strings like `7e-2`; `0` is zero.
fn parse_sig(s: &str) -> (f64, i32) {
    if s == "0" {
        return (0.0, 0);
    }
    let (m, e) = s.split_once('e').expect("scientific");
    (m.parse().unwrap(), e.parse().unwrap())
}

// Reference grid, row-major: scheme, then write/read, then x = 0.15, 0.05, 0.01.
const REFERENCE: [[[&str; 3]; 2]; 4] = [
    [["7e-2", "3e-3", "2e-5"], ["8e-3", "1e-4", "2e-7"]],
    // The reference prints 8e-8 for the x=0.05 write cell; 3x^2 there is
    // 7.5e-3, so the misprint is replaced by 8e-3.
    [["7e-2", "8e-3", "3e-4"], ["7e-2", "8e-3", "3e-4"]],
    [["5e-1", "2e-1", "3e-2"], ["3e-3", "1e-4", "1e-6"]],
    [["0", "0", "0"], ["3e-3", "1e-4", "1e-6"]],
];

fn table_reproduction() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_taurus-mini"))
        .args(["avail", "--trials", "0"])
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || "avail exited nonzero".into())?;
    let stdout = String::from_utf8(out.stdout).map_err(|e| e.to_string())?;
    let csv: Vec<Vec<&str>> = stdout
        .lines()
        .skip_while(|l| !l.starts_with("scheme,op,x"))
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    check(csv.len() == 24, || {
        format!("expected 24 cells, got {}", csv.len())
    })?;
    let mut exact_strings = 0;
    for (i, row) in csv.iter().enumerate() {
        let want = REFERENCE[i / 6][(i / 3) % 2][i % 3];
        let approx: f64 = row[4]
            .parse()
            .map_err(|_| format!("bad approx `{}`", row[4]))?;
        let printed = row[5];
        let (d, e) = parse_sig(want);
        // One significant digit: within half a unit of the reference digit.
        let ok = if d == 0.0 {
            approx == 0.0
        } else {
            (approx - d * 10f64.powi(e)).abs() <= 0.5 * 10f64.powi(e) * (1.0 + 1e-9)
        };
        check(ok, || {
            format!("{} {} x={}: {printed} vs {want}", row[0], row[1], row[2])
        })?;
        if printed == want {
            exact_strings += 1;
        }
    }
    let typo = &csv[6 + 1];
    check(typo[5] == "8e-3", || {
        format!("row 2 write x=0.05 printed {}", typo[5])
    })?;
    Ok(format!(
        "24/24 cells, {exact_strings} identical strings, 8e-8 misprint shown as 8e-3"
    ))
}

fn exact_vs_monte_carlo() -> Outcome {
    let mut worst = 20;
    for s in table_schemes() {
        for op in [OpKind::Write, OpKind::Read] {
            for x in TABLE_XS {
                let p = p_exact(s, op, x);
                let ok = (0..20u64)
                    .filter(|seed| monte_carlo(s, op, x, 1_000_000, 1000 + seed).within(p, 3.0))
                    .count();
                check(ok >= 19, || format!("{s} {op} x={x}: {ok}/20 within 3 se"))?;
                worst = worst.min(ok);
            }
        }
    }
    Ok(format!("24 cells, worst {worst}/20 seeds within 3 se"))
}

fn taurus_write_availability() -> Outcome {
    let r = log_write_trial(100, 0.15, 100_000, 10_000, 42);
    check(r.failed == 0, || format!("{} failed writes", r.failed))?;
    Ok(format!(
        "{} writes, 0 failed, {} attempts, {} PLogs",
        r.writes, r.attempts, r.plogs_created
    ))
}

fn run_bundled(name: &str, seed: u64) -> Result<(Sim, taurus_core::sim::RunReport), String> {
    let text = library::bundled(name).ok_or(format!("no bundled {name}"))?;
    Sim::run_scenario(text, seed).map_err(|e| e.to_string())
}

/// Every acknowledged record of `slice` is held (or consolidated) by every
/// replica of the slice.
fn all_replicas_hold(sim: &Sim, slice: SliceId, lsns: &[Lsn]) -> Result<(), String> {
    for n in &sim.placement()[&slice] {
        let ps = &sim.page_stores()[n];
        for &l in lsns {
            let (_, page) = sim
                .oracle()
                .record(l)
                .ok_or(format!("{l} not acknowledged"))?;
            check(
                ps.has_record(slice, l) || ps.covers_record(slice, page, l),
                || format!("{n} lacks {l}"),
            )?;
        }
    }
    Ok(())
}

fn fig5() -> Outcome {
    let slice = SliceId::new(1, 0);
    let mut notes = Vec::new();
    for (name, lost) in [
        ("fig5a", None),
        ("fig5b", Some(Lsn(2))),
        ("fig5c", Some(Lsn(3))),
    ] {
        let t = Instant::now();
        let (sim, r) = run_bundled(name, 7)?;
        check(r.passed(), || format!("{name}: {:?}", r.first_failure()))?;
        check(r.violations.is_empty() && r.audits > 0, || {
            format!("{name}: auditor")
        })?;
        let lsns: Vec<Lsn> = sim.oracle().records().keys().copied().collect();
        all_replicas_hold(&sim, slice, &lsns).map_err(|e| format!("{name}: {e}"))?;
        let persistent: BTreeSet<Lsn> = sim.placement()[&slice]
            .iter()
            .map(|n| sim.page_stores()[n].status(slice).unwrap().persistent)
            .collect();
        check(persistent.len() == 1, || {
            format!("{name}: persistent {persistent:?}")
        })?;
        let resent = sim.sal().unwrap().metrics.resent_records;
        match lost {
            None => check(resent == 0, || format!("{name}: resent {resent}"))?,
            Some(l) => {
                check(resent >= 1, || format!("{name}: nothing resent"))?;
                let range = format!("({},{}]", l.0 - 1, l.0);
                let resend = |x: &String| x.contains("resend") && x.contains(&range);
                check(sim.trace_lines().iter().any(resend), || {
                    format!("{name}: no resend of {l} in trace")
                })?;
            }
        }
        check(t.elapsed() < secs(5), || {
            format!("{name} took {:?}", t.elapsed())
        })?;
        notes.push(format!("{name} {} audits", r.audits));
    }
    Ok(notes.join(", "))
}

fn oracle_equivalence() -> Outcome {
    let p = GenParams::default();
    let (mut reads, mut writes, mut short, mut long) = (0, 0, 0, 0);
    for seed in 0..10 {
        let sc = gen::generate(&p, seed);
        let mut sim = Sim::from_scenario(&sc, seed).map_err(|e| e.to_string())?;
        sim.run_until(sc.end_time());
        let r = sim.report();
        check(r.passed(), || {
            format!("seed {seed}: {:?}", r.first_failure())
        })?;
        check(r.stats.read_mismatches == 0, || {
            format!("seed {seed}: read mismatch")
        })?;
        reads += r.stats.reads_ok;
        writes += r.stats.writes_ok + r.stats.writes_failed;
        for c in sim.classifications() {
            match c.class {
                FailureClass::ShortTerm => short += 1,
                FailureClass::LongTerm => long += 1,
            }
        }
    }
    check(short > 0 && long > 0, || {
        format!("fault mix short={short} long={long}")
    })?;
    Ok(format!(
        "10 seeds, {writes} writes, {reads} oracle-equal reads, {short} short / {long} long-term faults"
    ))
}

fn truncation_then_crash() -> Outcome {
    let (sim, r) = run_bundled("truncation_then_crash", 7)?;
    check(r.passed(), || format!("{:?}", r.first_failure()))?;
    let sal = sim.sal().ok_or("no master")?;
    check(sal.metrics.truncated_plogs > 0, || {
        "nothing truncated".into()
    })?;
    let rec = sim.recoveries();
    check(!rec.is_empty(), || "no recovery happened".into())?;
    for x in rec {
        let after = x.end.0.saturating_sub(x.checkpoint.0);
        check(x.resent <= after, || {
            format!("resent {} > {after}", x.resent)
        })?;
    }
    let x = rec[0];
    Ok(format!(
        "{} PLogs truncated, checkpoint {} end {} resent {}",
        sal.metrics.truncated_plogs, x.checkpoint, x.end, x.resent
    ))
}

fn quiescent_convergence() -> Outcome {
    let p = GenParams {
        writes: 2_000,
        reads: 100,
        duration_ms: 20_000,
        fault_rate: 0.3,
        ..GenParams::default()
    };
    let (mut worst, mut total) = (0, 0);
    for seed in 0..10 {
        let mut sc = gen::generate(&p, seed);
        sc.events.retain(|(_, a)| !matches!(a, Action::Check(_)));
        // Stop while faults may still be active, right after the last write.
        let last_write = sc
            .events
            .iter()
            .filter(|(_, a)| matches!(a, Action::Write { .. }))
            .map(|(t, _)| *t)
            .max()
            .unwrap_or(0);
        let mut sim = Sim::from_scenario(&sc, seed).map_err(|e| e.to_string())?;
        sim.run_until(last_write + 1);
        // Heal, let in-flight buffers land, then count explicit rounds.
        sim.quiesce(1_000);
        let rounds = sim
            .converge_by_gossip(3)
            .map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.max(rounds.values().copied().max().unwrap_or(0));
        total += rounds.values().sum::<u32>();
        let r = sim.report();
        check(r.violations.is_empty(), || {
            format!("seed {seed}: {:?}", r.violations.first())
        })?;
    }
    let (_, r) = run_bundled("quiescent_convergence", 7)?;
    check(r.passed(), || format!("bundled: {:?}", r.first_failure()))?;
    Ok(format!(
        "10 seeds, {total} rounds in all, at most {worst} per slice"
    ))
}

fn replica_lag() -> Outcome {
    let (_, r) = run_bundled("replica_lag", 7)?;
    check(r.passed(), || format!("{:?}", r.first_failure()))?;
    check(r.stats.view_samples >= 1000, || {
        format!("{} views", r.stats.view_samples)
    })?;
    check(r.stats.view_read_failures == 0, || {
        "view read failed".into()
    })?;
    Ok(format!(
        "{} views, {} replica reads, max lag {} ms",
        r.stats.view_samples, r.stats.replica_reads_ok, r.stats.max_replica_lag_ms
    ))
}

const COLD_PAGES: &str = "
CONFIG consolidation=lcf slices=1 log_cache_fragments=4 consolidate_pages_per_step=1
CONFIG consolidate_interval_ms=200 slice_flush_timeout_ms=1
REPEAT 16 EVERY 5 AT 10 WRITE page=random len=32
REPEAT 200 EVERY 5 AT 100 WRITE page=0 len=16
AT 6000 CHECK oracle
AT 6000 CHECK durability
";

fn consolidation_policy() -> Outcome {
    for (name, text) in library::BUNDLED {
        let (sim, _) = Sim::run_scenario(text, 7).map_err(|e| e.to_string())?;
        check(
            sim.config().consolidation == ConsolidationPolicy::LogCacheCentric,
            || format!("{name} is not log-cache-centric"),
        )?;
        check(sim.disk_record_reads() == 0, || {
            format!("{name}: {} disk record reads", sim.disk_record_reads())
        })?;
    }
    let (sim, r) = Sim::run_scenario(COLD_PAGES, 7).map_err(|e| e.to_string())?;
    check(r.passed(), || {
        format!("cold pages: {:?}", r.first_failure())
    })?;
    let cold = sim.disk_record_reads();
    check(cold > 0, || {
        "longest-chain-first never read records from disk".into()
    })?;
    let lcc = COLD_PAGES.replace("consolidation=lcf", "consolidation=lcc");
    let (sim, _) = Sim::run_scenario(&lcc, 7).map_err(|e| e.to_string())?;
    check(sim.disk_record_reads() == 0, || {
        "log-cache-centric cold run read disk".into()
    })?;
    Ok(format!(
        "{} bundled scenarios at 0, cold pages under longest-chain-first {cold}",
        library::BUNDLED.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let mut r = Runner { failed: Vec::new() };
    r.run(1, "availability table", secs(1), table_reproduction);
    r.run(2, "exact vs monte carlo", secs(30), exact_vs_monte_carlo);
    r.run(
        3,
        "taurus write availability",
        secs(30),
        taurus_write_availability,
    );
    r.run(4, "page store recovery scenarios", secs(15), fig5);
    r.run(5, "oracle equivalence", secs(120), oracle_equivalence);
    r.run(6, "truncation then crash", secs(10), truncation_then_crash);
    r.run(7, "quiescent convergence", secs(60), quiescent_convergence);
    r.run(8, "replica physical consistency", secs(30), replica_lag);
    r.run(9, "consolidation policy", secs(60), consolidation_policy);
    r.run(10, "append-only audit", secs(1), || {
        let w = disk::global_writes();
        let o = disk::global_overwrites();
        check(o == 0 && w > 0, || format!("{o} overwritten offsets"))?;
        Ok(format!("{w} appends, 0 overwrites"))
    });
    assert!(r.failed.is_empty(), "failed criteria: {:?}", r.failed);
}
