use peershare_testkit::gauntlet::run_gauntlet;

#[test]
fn every_bad_credential_is_refused_without_side_effects() {
    let cases = run_gauntlet();
    assert_eq!(cases.len(), 21);
    let failed: Vec<_> = cases.iter().filter(|c| !c.passed).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}
