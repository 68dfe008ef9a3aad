//! Scenario scripts shipped with the crate.

pub const BUNDLED: &[(&str, &str)] = &[
    (
        "fig3_writepath",
        include_str!("../../scenarios/fig3_writepath.txt"),
    ),
    ("fig5a", include_str!("../../scenarios/fig5a.txt")),
    ("fig5b", include_str!("../../scenarios/fig5b.txt")),
    ("fig5c", include_str!("../../scenarios/fig5c.txt")),
    (
        "truncation_then_crash",
        include_str!("../../scenarios/truncation_then_crash.txt"),
    ),
    (
        "replica_lag",
        include_str!("../../scenarios/replica_lag.txt"),
    ),
    (
        "quiescent_convergence",
        include_str!("../../scenarios/quiescent_convergence.txt"),
    ),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
