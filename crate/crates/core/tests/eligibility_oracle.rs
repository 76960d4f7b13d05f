use peershare_testkit::episode::{run_episode, EpisodeLimits};

#[test]
fn randomized_episodes_match_brute_force_oracle() {
    let mut checks = 0;
    for seed in 1000..1040 {
        let report = run_episode(seed, EpisodeLimits::default()).unwrap_or_else(|e| panic!("{e}"));
        checks += report.checks;
    }
    assert!(checks > 0);
}

#[test]
fn small_dense_episodes() {
    // Few users and lists make collisions (same slot, same list, re-registration) frequent.
    let limits = EpisodeLimits {
        max_users: 3,
        max_devices: 1,
        max_lists: 1,
        max_ops: 60,
    };
    for seed in 0..40 {
        run_episode(seed, limits).unwrap_or_else(|e| panic!("{e}"));
    }
}

#[test]
fn episodes_cover_every_operation_kind() {
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..30 {
        let report = run_episode(seed, EpisodeLimits::default()).unwrap();
        seen.extend(report.op_counts.keys().copied());
    }
    for kind in [
        "upload",
        "update",
        "delete",
        "policy",
        "graph",
        "unregister",
        "register",
        "advance_clock",
    ] {
        assert!(seen.contains(kind), "no {kind} generated");
    }
}
