use peershare_testkit::redaction::run_redaction_fuzz;

#[test]
fn foreign_views_never_carry_owner_fields() {
    let mut foreign = 0;
    for seed in 0..5 {
        let report = run_redaction_fuzz(seed, 100).unwrap();
        assert_eq!(report.responses, 100);
        foreign += report.foreign_views;
    }
    // The traffic must actually exercise foreign views.
    assert!(foreign > 500, "only {foreign} foreign views");
}
