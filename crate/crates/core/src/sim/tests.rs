use super::*;

fn run(text: &str, seed: u64) -> (Sim, RunReport) {
    Sim::run_scenario(text, seed).expect("valid scenario")
}

#[test]
fn empty_scenario_has_empty_trace() {
    let (sim, r) = run("", 1);
    assert!(sim.trace_lines().is_empty());
    assert!(r.passed());
}

#[test]
fn same_seed_same_trace() {
    let text = library::bundled("fig5a").unwrap();
    let a = run(text, 7).1.trace_hash;
    let b = run(text, 7).1.trace_hash;
    assert_eq!(a, b);
}

#[test]
fn bundled_scenarios_pass() {
    for (name, text) in library::BUNDLED {
        let (_, r) = run(text, 7);
        println!(
            "{name}: {:?} audits={} {:?}",
            r.first_failure(),
            r.audits,
            r.stats
        );
        assert!(r.passed(), "{name}: {:?}", r.first_failure());
    }
}

#[test]
fn generated_run_with_replacement_passes() {
    let p = gen::GenParams {
        writes: 2_000,
        reads: 200,
        duration_ms: 30_000,
        fault_rate: 0.3,
        ..gen::GenParams::default()
    };
    let sc = gen::generate(&p, 0);
    let mut sim = Sim::from_scenario(&sc, 0).unwrap();
    sim.run_until(sc.end_time());
    let r = sim.report();
    assert!(r.passed(), "{:?}", r.first_failure());
    assert_eq!(r.stats.read_mismatches, 0);
}
