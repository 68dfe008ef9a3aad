use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use taurus_core::availability::{table, table_csv, table_text, TABLE_XS};
use taurus_core::bench::{self, BenchParams, BenchResult, Workload};
use taurus_core::config::{Config, PoolPolicy, ScaleProfile};
use taurus_core::sim::gen::{self, GenParams};
use taurus_core::sim::library;
use taurus_core::sim::{RunReport, Scenario, Sim};

#[derive(Parser)]
#[command(name = "taurus-mini", version, about = "Storage layer simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario script or a generated workload.
    Run(RunArgs),
    /// Print the replication unavailability table.
    Avail(AvailArgs),
    /// Compare buffer pool hit rates of LFU and LRU.
    BenchCache(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long, conflicts_with = "gen", required_unless_present = "gen")]
    scenario: Option<String>,
    /// Generator parameters, e.g. "pages=64 dur=60s faultRate=0.1".
    #[arg(long)]
    gen: Option<String>,
    #[arg(long, env = "TAURUS_MINI_SEED")]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Profile::Test)]
    profile: Profile,
    /// Directory for trace.txt, metrics.csv and report.txt.
    #[arg(long, default_value = "taurus-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Test,
    Prod,
}

#[derive(Args)]
struct AvailArgs {
    /// Comma-separated node failure probabilities.
    #[arg(long, value_delimiter = ',', default_values_t = TABLE_XS.to_vec())]
    xs: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, env = "TAURUS_MINI_SEED", default_value_t = 1)]
    seed: u64,
    /// Also write the CSV to this file.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WorkloadArg {
    Zipf,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Lfu,
    Lru,
    Both,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value_t = PolicyArg::Both)]
    policy: PolicyArg,
    #[arg(long, value_enum, default_value_t = WorkloadArg::Zipf)]
    workload: WorkloadArg,
    #[arg(long, default_value_t = 1.1)]
    zipf_s: f64,
    #[arg(long, default_value_t = 4096)]
    pages: u64,
    #[arg(long, default_value_t = 256)]
    pool: usize,
    #[arg(long, default_value_t = 200_000)]
    accesses: u64,
    #[arg(long, env = "TAURUS_MINI_SEED", default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Avail(a) => cmd_avail(a).map(|_| true),
        Cmd::BenchCache(a) => cmd_bench(a).map(|_| true),
    };
    match res {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).with_context(|| format!("reading {arg}"))?
    } else {
        let name = arg.trim_end_matches(".txt");
        match library::bundled(name) {
            Some(t) => t.to_string(),
            None => bail!("no scenario file or bundled scenario named `{arg}`"),
        }
    };
    Ok(Scenario::parse(&text)?)
}

fn cmd_run(a: RunArgs) -> Result<bool> {
    let (sc, seed) = match (&a.scenario, &a.gen) {
        (Some(s), _) => (load_scenario(s)?, a.seed.unwrap_or(0)),
        (None, Some(g)) => {
            let Some(seed) = a.seed else {
                clap::Error::raw(
                    clap::error::ErrorKind::MissingRequiredArgument,
                    "--gen needs --seed or TAURUS_MINI_SEED\n",
                )
                .exit();
            };
            let p = GenParams::parse(g).map_err(anyhow::Error::msg)?;
            (gen::generate(&p, seed), seed)
        }
        (None, None) => unreachable!("clap requires one of --scenario/--gen"),
    };
    let mut cfg = Config::for_profile(match a.profile {
        Profile::Test => ScaleProfile::Test,
        Profile::Prod => ScaleProfile::Production,
    });
    for (k, v) in &sc.config {
        cfg.set(k, v).map_err(anyhow::Error::msg)?;
    }
    let mut sim = Sim::with_config(cfg, &sc, seed)?;
    sim.run_until(sc.end_time());
    let report = sim.report();

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut trace = sim.trace_lines().join("\n");
    if !trace.is_empty() {
        trace.push('\n');
    }
    fs::write(a.out.join("trace.txt"), trace)?;
    fs::write(a.out.join("metrics.csv"), sim.metrics_csv())?;
    let text = report_text(&sim, &report, seed);
    fs::write(a.out.join("report.txt"), &text)?;
    print!("{text}");
    match report.first_failure() {
        None => Ok(true),
        Some(f) => {
            eprintln!("FAIL: {f}");
            Ok(false)
        }
    }
}

fn report_text(sim: &Sim, r: &RunReport, seed: u64) -> String {
    let s = &r.stats;
    let mut out = String::new();
    out += &format!("seed {seed}\n");
    out += &format!("trace_sha256 {}\n", r.trace_hash);
    out += &format!("simulated_ms {}\n", sim.now());
    out += &format!(
        "writes ok={} failed={} deferred={}\n",
        s.writes_ok, s.writes_failed, s.writes_deferred
    );
    out += &format!(
        "reads ok={} failed={} mismatches={}\n",
        s.reads_ok, s.reads_failed, s.read_mismatches
    );
    out += &format!(
        "replica_reads ok={} failed={} view_samples={}\n",
        s.replica_reads_ok, s.replica_reads_failed, s.view_samples
    );
    out += &format!(
        "messages sent={} dropped={} gossip_records={} replacements={}\n",
        s.messages_sent, s.messages_dropped, s.gossip_records, s.replacements
    );
    out += &format!("disk_record_reads {}\n", sim.disk_record_reads());
    out += &format!("overwrites {}\n", sim.overwrites());
    out += &format!("audits {} violations {}\n", r.audits, r.violations.len());
    for v in &r.violations {
        out += &format!("  violation: {v}\n");
    }
    for c in &r.checks {
        let st = if c.passed { "ok" } else { "FAILED" };
        out += &format!("check t={} {} {st}", c.time, c.check);
        if !c.detail.is_empty() {
            out += &format!(" ({})", c.detail);
        }
        out.push('\n');
    }
    out += if r.passed() {
        "result PASS\n"
    } else {
        "result FAIL\n"
    };
    out
}

fn cmd_avail(a: AvailArgs) -> Result<()> {
    if let Some(x) = a.xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        bail!("failure probability {x} outside [0,1]");
    }
    let cells = table(&a.xs, a.trials, a.seed);
    print!("{}", table_text(&cells));
    println!();
    let csv = table_csv(&cells);
    print!("{csv}");
    if let Some(p) = a.csv {
        fs::write(&p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let p = BenchParams {
        pages: a.pages,
        pool_pages: a.pool,
        accesses: a.accesses,
        workload: match a.workload {
            WorkloadArg::Zipf => Workload::Zipf { s: a.zipf_s },
            WorkloadArg::Uniform => Workload::Uniform,
        },
        ..BenchParams::default()
    };
    if let Workload::Zipf { s } = p.workload {
        if s <= 0.0 || p.pages == 0 {
            bail!("zipf needs a positive exponent and at least one page");
        }
    }
    let trace = bench::access_trace(&p, a.seed);
    let policies: &[PoolPolicy] = match a.policy {
        PolicyArg::Lfu => &[PoolPolicy::Lfu],
        PolicyArg::Lru => &[PoolPolicy::Lru],
        PolicyArg::Both => &[PoolPolicy::Lfu, PoolPolicy::Lru],
    };
    let results: Vec<BenchResult> = policies
        .iter()
        .map(|&pol| bench::replay(&trace, &p, pol))
        .collect();
    println!(
        "{:<6} {:>10} {:>10} {:>9}",
        "policy", "hits", "misses", "hit_rate"
    );
    for r in &results {
        println!(
            "{:<6} {:>10} {:>10} {:>9.4}",
            r.policy, r.hits, r.misses, r.hit_rate
        );
    }
    if let [lfu, lru] = results.as_slice() {
        let rel = if lru.hit_rate > 0.0 {
            (lfu.hit_rate / lru.hit_rate - 1.0) * 100.0
        } else {
            0.0
        };
        println!("lfu_vs_lru {rel:+.1}%");
        if matches!(p.workload, Workload::Zipf { .. }) && lfu.hit_rate < lru.hit_rate {
            println!("note: LFU below LRU on this skewed workload");
        }
    }
    Ok(())
}
