use peershare_testkit::durability::{check_all_boundaries, SCRIPT_LEN};

#[test]
fn crash_at_every_boundary_matches_clean_run() {
    let runs = check_all_boundaries().unwrap();
    assert_eq!(runs, 2 * SCRIPT_LEN);
}
