use std::fs;
use std::process::{Command, Output};

fn mini(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taurus-mini"))
        .args(args)
        .env_remove("TAURUS_MINI_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bundled_scenario_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = mini(&["run", "--scenario", "fig5a", "--seed", "7", "--out", out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(dir.path().join("trace.txt")).unwrap();
    assert!(trace.lines().any(|l| l.contains("gossip")));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("time_ms,metric,node,value\n"));
    assert!(metrics.lines().count() > 1);
    let report = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(report.contains("result PASS"));
}

#[test]
fn scenario_file_path_and_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.txt");
    fs::write(
        &sc,
        "AT 10 WRITE page=1 len=8\nAT 500 CHECK present lsn=9\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = mini(&[
        "run",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("FAIL: CHECK present"), "{err}");
}

#[test]
fn gen_requires_seed() {
    let o = mini(&["run", "--gen", "pages=64 dur=5s"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn gen_run_passes_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = Command::new(env!("CARGO_BIN_EXE_taurus-mini"))
            .args(["run", "--gen", "pages=64 dur=60s faultRate=0.1", "--out"])
            .arg(d.path())
            .env("TAURUS_MINI_SEED", "9")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.txt", "metrics.csv", "report.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn unknown_scenario_is_an_error() {
    let o = mini(&["run", "--scenario", "nope", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn avail_zero_row() {
    let o = mini(&["avail", "--xs", "0", "--trials", "1000"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let rows: Vec<&str> = s
        .lines()
        .skip_while(|l| !l.starts_with("scheme,"))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 8);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert_eq!(&f[3..8], ["0", "0", "0", "0", "0"], "{r}");
    }
}

#[test]
fn avail_rejects_bad_probability() {
    assert_eq!(mini(&["avail", "--xs", "1.5"]).status.code(), Some(2));
}

fn hit_rates(o: &Output) -> Vec<f64> {
    stdout(o)
        .lines()
        .filter(|l| l.starts_with("lfu ") || l.starts_with("lru "))
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn bench_cache_cases() {
    let z = mini(&["bench-cache", "--accesses", "50000"]);
    let r = hit_rates(&z);
    assert_eq!(r.len(), 2);
    assert!(r[0] >= r[1], "LFU {} below LRU {}", r[0], r[1]);

    let empty = mini(&["bench-cache", "--pool", "0", "--accesses", "1000"]);
    assert_eq!(hit_rates(&empty), vec![0.0, 0.0]);

    let tiny = mini(&[
        "bench-cache",
        "--workload",
        "uniform",
        "--pages",
        "8",
        "--accesses",
        "10000",
    ]);
    for h in hit_rates(&tiny) {
        assert!(h > 0.99);
    }

    let one = mini(&["bench-cache", "--policy", "lru", "--accesses", "1000"]);
    assert_eq!(hit_rates(&one).len(), 1);
}
