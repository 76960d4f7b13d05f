#[test]
fn update_of_server_deleted_item_purges_it_everywhere() {
    peershare_testkit::scenarios::update_after_server_delete().unwrap();
}
