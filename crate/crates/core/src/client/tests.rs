use std::sync::Arc;

use super::*;
use crate::clock::ManualClock;
use crate::fixtures;
use crate::model::{Sensitivity, StoredItem};
use crate::provider::MockProvider;
use crate::server::{Server, Store};

const APP: &str = "peershare-app";
const NET: &str = "mocknet";

struct World {
    clock: Arc<ManualClock>,
    provider: Arc<MockProvider>,
    server: Arc<Server>,
    wire: Arc<FlakyTransport<RecordingTransport<InProcessTransport>>>,
}

impl World {
    fn new() -> Self {
        let clock = Arc::new(ManualClock::new(fixtures::FIXTURE_CREATED_AT + 100));
        let provider = Arc::new(MockProvider::new(NET, clock.clone()));
        let server =
            Arc::new(Server::new(Store::in_memory().unwrap(), clock.clone()).with_provider(provider.clone(), APP));
        let wire = Arc::new(FlakyTransport::new(RecordingTransport::new(InProcessTransport::new(
            server.clone(),
        ))));
        Self {
            clock,
            provider,
            server,
            wire,
        }
    }

    fn identity(name: &str) -> SocialIdentity {
        SocialIdentity::new(NET, name, name)
    }

    fn agent_with(&self, name: &str, config: AgentConfig) -> Agent {
        if self.provider.get_friends(name).is_err() {
            self.provider.add_user(name, name).unwrap();
        }
        let agent = Agent::new(config, self.wire.clone(), self.clock.clone()).with_provider(self.provider.clone());
        let token = self.provider.issue_token(name, APP, 365 * 86400).unwrap().token;
        agent.login(Self::identity(name), token).unwrap();
        agent
    }

    fn agent(&self, name: &str) -> Agent {
        self.agent_with(name, AgentConfig::default())
    }

    fn server_items(&self) -> Vec<StoredItem> {
        self.server.all_items().unwrap()
    }
}

fn bdaddr(value: u8) -> AppData {
    // Owner left empty: the agent fills in the logged-in user.
    fixtures::bdaddr_binding(&SocialIdentity::new("", "", ""), "", &[value; 6])
}

fn nickname_for(friend: &str) -> AppData {
    let mut data = fixtures::bdaddr_binding(&World::identity(friend), "their-phone", &[7; 6]);
    data.descriptor.binding_type = BindingType::UserAsserted;
    data
}

#[test]
fn add_queues_owner_asserted_upload() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::peersense_app();
    let id = alice.add_data(&app, bdaddr(1)).unwrap();
    assert_eq!(id, 1);
    let item = &alice.local_items().unwrap()[0];
    assert_eq!(item.sync, SyncState::PendingUpload);
    assert_eq!(item.creator, app);
    assert_eq!(item.data.creator, app);
    assert_eq!(item.data.owner, World::identity("alice"));
    assert_eq!(item.data.device_id, "device-1");

    let summary = alice.flush().unwrap();
    assert_eq!(summary.uploaded, 1);
    let item = &alice.local_items().unwrap()[0];
    assert_eq!(item.sync, SyncState::Synced);
    assert_eq!(item.object_id, w.server_items()[0].object_id);
}

#[test]
fn user_asserted_items_stay_local() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::peersense_app();
    let id = alice.add_data(&app, nickname_for("bob")).unwrap();
    alice.add_data(&app, bdaddr(1)).unwrap();
    assert_eq!(alice.local_items().unwrap()[0].sync, SyncState::LocalOnly);
    alice.refresh().unwrap();
    alice.update_data(&app, id, nickname_for("bob")).unwrap();
    alice.refresh().unwrap();

    assert_eq!(w.server_items().len(), 1);
    for (_, bytes) in w.wire_requests() {
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains("user_asserted"), "{text}");
        assert!(!text.contains("their-phone"), "{text}");
    }
    let seen = alice.get_shared_data_detail(&app, None).unwrap();
    assert!(seen
        .iter()
        .any(|i| i.local_id == Some(id) && i.sync == Some(SyncState::LocalOnly)));
}

impl World {
    fn wire_requests(&self) -> Vec<(Method, Vec<u8>)> {
        self.wire.inner().requests()
    }
}

#[test]
fn offline_add_uploads_exactly_once() {
    let w = World::new();
    let alice = w.agent("alice");
    w.wire.set_fault(Fault::Offline);
    alice.add_data(&fixtures::peersense_app(), bdaddr(1)).unwrap();
    assert!(alice.flush().unwrap_err().is_transient());
    assert!(alice.refresh().is_err());
    assert_eq!(w.server_items().len(), 0);
    w.wire.set_fault(Fault::None);
    alice.refresh().unwrap();
    alice.refresh().unwrap();
    assert_eq!(w.server_items().len(), 1);
}

#[test]
fn registration_waits_for_connectivity() {
    let w = World::new();
    w.wire.set_fault(Fault::Offline);
    let alice = w.agent("alice");
    assert_eq!(alice.get_my_social_data().unwrap().peershare_id, None);
    alice.add_data(&fixtures::peersense_app(), bdaddr(1)).unwrap();
    w.wire.set_fault(Fault::None);
    alice.flush().unwrap();
    assert!(alice.get_my_social_data().unwrap().peershare_id.is_some());
    assert_eq!(w.server_items().len(), 1);
}

#[test]
fn lost_upload_response_does_not_duplicate() {
    let w = World::new();
    let alice = w.agent("alice");
    alice.add_data(&fixtures::peersense_app(), bdaddr(1)).unwrap();
    w.wire.fault_at(w.wire.sent(), Fault::LoseResponse);
    assert!(alice.flush().is_err());
    assert_eq!(w.server_items().len(), 1);
    alice.flush().unwrap();
    assert_eq!(w.server_items().len(), 1);
    assert_eq!(alice.local_items().unwrap()[0].object_id, w.server_items()[0].object_id);
}

#[test]
fn app_acl_guards_update_and_remove() {
    let w = World::new();
    let alice = w.agent("alice");
    let peersense = fixtures::peersense_app();
    let other = fixtures::scampi_app();
    let id = alice.add_data(&peersense, bdaddr(1)).unwrap();
    alice.flush().unwrap();

    assert!(matches!(
        alice.update_data(&other, id, bdaddr(2)),
        Err(ClientError::AclDenied(_))
    ));
    assert!(matches!(alice.remove_data(&other, id), Err(ClientError::AclDenied(_))));
    assert_eq!(alice.local_items().unwrap()[0].sync, SyncState::Synced);

    alice.update_data(&peersense, id, bdaddr(2)).unwrap();
    assert_eq!(alice.local_items().unwrap()[0].sync, SyncState::PendingUpdate);
    alice.flush().unwrap();
    assert_eq!(w.server_items()[0].data.data_value, vec![2; 6]);
    assert!(matches!(
        alice.update_data(&peersense, 99, bdaddr(2)),
        Err(ClientError::NotFound(99))
    ));
}

#[test]
fn update_cannot_move_item_to_another_slot() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::peersense_app();
    let id = alice.add_data(&app, bdaddr(1)).unwrap();
    let mut moved = bdaddr(1);
    moved.device_id = "dev-9".into();
    assert!(matches!(
        alice.update_data(&app, id, moved),
        Err(ClientError::Validation(_))
    ));
}

#[test]
fn foreign_owner_is_rejected() {
    let w = World::new();
    let alice = w.agent("alice");
    let data = fixtures::bdaddr_binding(&World::identity("bob"), "d", &[1; 6]);
    assert!(matches!(
        alice.add_data(&fixtures::peersense_app(), data),
        Err(ClientError::Validation(_))
    ));
}

#[test]
fn update_of_server_deleted_item_purges_locally() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::peersense_app();
    let id = alice.add_data(&app, bdaddr(1)).unwrap();
    alice.flush().unwrap();
    let object_id = alice.local_items().unwrap()[0].object_id;
    // Delete it server-side behind the agent's back.
    let session_token = w.provider.issue_token("alice", APP, 60).unwrap().token;
    let peershare_id = alice.get_my_social_data().unwrap().peershare_id.unwrap();
    let response = w.server.handle(Request {
        token: session_token,
        identity: World::identity("alice"),
        peershare_id: Some(peershare_id),
        body: RequestBody::Delete(DeleteBody {
            object_ids: vec![object_id],
        }),
    });
    assert!(response.into_result().is_ok());

    alice.update_data(&app, id, bdaddr(2)).unwrap();
    let summary = alice.flush().unwrap();
    assert_eq!(summary.purged, 1);
    assert!(alice.local_items().unwrap().is_empty());
    assert!(matches!(
        alice.update_data(&app, id, bdaddr(3)),
        Err(ClientError::NotFound(_))
    ));
}

#[test]
fn remove_paths() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::peersense_app();

    // Never uploaded: purely local.
    let before = w.wire.sent();
    let id = alice.add_data(&app, bdaddr(1)).unwrap();
    alice.remove_data(&app, id).unwrap();
    assert!(alice.local_items().unwrap().is_empty());
    alice.flush().unwrap();
    assert_eq!(w.wire.sent(), before);

    // Uploaded: tombstone until the server confirms.
    let id = alice.add_data(&app, bdaddr(2)).unwrap();
    alice.flush().unwrap();
    alice.remove_data(&app, id).unwrap();
    assert_eq!(alice.local_items().unwrap()[0].sync, SyncState::PendingDelete);
    assert!(alice.get_shared_data_detail(&app, None).unwrap().is_empty());
    assert_eq!(alice.flush().unwrap().deleted, 1);
    assert!(alice.local_items().unwrap().is_empty());
    assert!(w.server_items().is_empty());
}

#[test]
fn remove_after_unacknowledged_upload_deletes_on_server() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::peersense_app();
    let id = alice.add_data(&app, bdaddr(1)).unwrap();
    w.wire.fault_at(w.wire.sent(), Fault::LoseResponse);
    assert!(alice.flush().is_err());
    assert_eq!(w.server_items().len(), 1);
    alice.remove_data(&app, id).unwrap();
    alice.flush().unwrap();
    assert!(w.server_items().is_empty());
    assert!(alice.local_items().unwrap().is_empty());
}

#[test]
fn friends_see_items_after_refresh() {
    let w = World::new();
    let alice = w.agent("alice");
    let bob = w.agent("bob");
    w.provider.befriend("alice", "bob").unwrap();
    let app = fixtures::peersense_app();
    alice.add_data(&app, bdaddr(1)).unwrap();
    alice
        .add_data(
            &fixtures::crowdshare_app(),
            fixtures::public_key(&SocialIdentity::new("", "", ""), b"pk"),
        )
        .unwrap();
    let summary = alice.refresh().unwrap();
    assert_eq!(summary.flushed.uploaded, 2);

    assert!(bob.get_shared_data_detail(&app, None).unwrap().is_empty());
    bob.refresh().unwrap();
    let all = bob.get_shared_data_detail(&app, None).unwrap();
    assert_eq!(all.len(), 2);
    let filtered = bob
        .get_shared_data_detail(&app, Some(fixtures::BDADDR_BINDING))
        .unwrap();
    assert_eq!(filtered.len(), 1);
    assert_eq!(filtered[0].data.owner.social_id, "alice");
    assert!(!filtered[0].is_owner);
    assert_eq!(filtered[0].object_id, None);
}

#[test]
fn remote_set_matches_download() {
    let w = World::new();
    let alice = w.agent("alice");
    let bob = w.agent("bob");
    w.provider.befriend("alice", "bob").unwrap();
    alice.add_data(&fixtures::peersense_app(), bdaddr(1)).unwrap();
    alice.refresh().unwrap();
    bob.refresh().unwrap();
    let peershare_id = bob.get_my_social_data().unwrap().peershare_id.unwrap();
    let response = w.server.handle(Request {
        token: w.provider.issue_token("bob", APP, 60).unwrap().token,
        identity: World::identity("bob"),
        peershare_id: Some(peershare_id),
        body: RequestBody::Download(EmptyBody {}),
    });
    let ResponseBody::Download(expected) = response.into_result().unwrap() else {
        panic!()
    };
    let got: Vec<ItemView> = bob.remote_items().unwrap().into_iter().map(|r| r.view).collect();
    assert_eq!(got, expected.items);
}

#[test]
fn expired_remote_items_are_hidden_before_next_refresh() {
    let w = World::new();
    let alice = w.agent("alice");
    let bob = w.agent("bob");
    w.provider.befriend("alice", "bob").unwrap();
    let mut short = fixtures::bearer_token(&SocialIdentity::new("", "", ""), b"t");
    short.expires_at = w.clock.now() + 60;
    alice.add_data(&fixtures::crowdshare_app(), short).unwrap();
    alice.refresh().unwrap();
    bob.refresh().unwrap();
    let app = fixtures::crowdshare_app();
    assert_eq!(bob.get_shared_data_detail(&app, None).unwrap().len(), 1);
    w.clock.advance(60);
    assert!(bob.get_shared_data_detail(&app, None).unwrap().is_empty());
}

#[test]
fn my_social_data_follows_login() {
    let w = World::new();
    let agent = Agent::new(AgentConfig::default(), w.wire.clone(), w.clock.clone());
    assert!(matches!(agent.get_my_social_data(), Err(ClientError::NotAuthenticated)));
    assert!(matches!(
        agent.add_data(&fixtures::peersense_app(), bdaddr(1)),
        Err(ClientError::NotAuthenticated)
    ));
    for name in ["alice", "bob"] {
        w.provider.add_user(name, name).unwrap();
        let token = w.provider.issue_token(name, APP, 60).unwrap().token;
        agent.login(World::identity(name), token).unwrap();
        let me = agent.get_my_social_data().unwrap();
        assert_eq!(me.identity.social_id, name);
        assert!(me.peershare_id.unwrap().starts_with("ps-"));
    }
}

#[test]
fn acl_policies_with_stale_fallback() {
    let w = World::new();
    let alice = w.agent("alice");
    let only_default = alice.get_acl_policies().unwrap();
    assert_eq!(only_default.options.len(), 1);
    assert_eq!(only_default.options[0].policy, SharingPolicy::AllFriends);

    let close = w.provider.create_list("alice", "close").unwrap();
    let policies = alice.get_acl_policies().unwrap();
    assert!(!policies.stale);
    assert_eq!(policies.options[1].policy, SharingPolicy::named(&close));
    assert_eq!(policies.options[1].display_name, "close");

    w.provider.set_reachable(false);
    let cached = alice.get_acl_policies().unwrap();
    assert!(cached.stale);
    assert_eq!(cached.options, policies.options);

    let bob = w.agent("bob");
    assert!(matches!(
        bob.get_acl_policies(),
        Err(ClientError::ProviderUnavailable(_))
    ));
}

#[test]
fn missed_refresh_runs_once_after_restart() {
    let w = World::new();
    let dir = tempfile::tempdir().unwrap();
    let config = AgentConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..AgentConfig::default()
    };
    let alice = w.agent_with("alice", config.clone());
    assert!(alice.tick().unwrap().is_some(), "first start refreshes");
    assert!(alice.tick().unwrap().is_none());
    w.clock.advance(DEFAULT_REFRESH_INTERVAL - 1);
    assert!(alice.tick().unwrap().is_none());
    drop(alice);

    w.clock.advance(3 * DEFAULT_REFRESH_INTERVAL);
    let alice = w.agent_with("alice", config);
    assert!(alice.tick().unwrap().is_some());
    assert!(alice.tick().unwrap().is_none());
    assert_eq!(
        alice.next_refresh_at().unwrap(),
        Some(w.clock.now() + DEFAULT_REFRESH_INTERVAL)
    );
}

#[test]
fn failed_scheduled_refresh_backs_off_and_keeps_queue() {
    let w = World::new();
    let alice = w.agent("alice");
    alice.add_data(&fixtures::peersense_app(), bdaddr(1)).unwrap();
    alice.add_data(&fixtures::peersense_app(), nickname_for("bob")).unwrap();
    w.wire.set_fault(Fault::Offline);
    assert!(alice.tick().is_err());
    assert!(alice.tick().unwrap().is_none(), "retry waits for the backoff");
    w.wire.set_fault(Fault::None);
    w.clock.advance(30);
    let summary = alice.tick().unwrap().unwrap();
    assert_eq!(summary.flushed.uploaded, 1);
}

#[test]
fn queue_survives_restart() {
    let w = World::new();
    let dir = tempfile::tempdir().unwrap();
    let config = AgentConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..AgentConfig::default()
    };
    w.wire.set_fault(Fault::Offline);
    let alice = w.agent_with("alice", config.clone());
    alice.add_data(&fixtures::peersense_app(), bdaddr(1)).unwrap();
    drop(alice);
    w.wire.set_fault(Fault::None);
    let alice = w.agent_with("alice", config);
    assert_eq!(alice.local_items().unwrap()[0].sync, SyncState::PendingUpload);
    alice.flush().unwrap();
    assert_eq!(w.server_items().len(), 1);
}

#[test]
fn replaced_user_specific_item_is_dropped_locally() {
    let w = World::new();
    let alice = w.agent("alice");
    let app = fixtures::crowdshare_app();
    let anyone = SocialIdentity::new("", "", "");
    alice.add_data(&app, fixtures::bearer_token(&anyone, b"one")).unwrap();
    alice.flush().unwrap();
    alice.add_data(&app, fixtures::bearer_token(&anyone, b"two")).unwrap();
    let summary = alice.flush().unwrap();
    assert_eq!(summary.purged, 1);
    let local = alice.local_items().unwrap();
    assert_eq!(local.len(), 1);
    assert_eq!(local[0].data.data_value, b"two");
    assert_eq!(w.server_items().len(), 1);
}

#[test]
fn public_items_keep_sensitivity() {
    let w = World::new();
    let alice = w.agent("alice");
    alice
        .add_data(
            &fixtures::crowdshare_app(),
            fixtures::public_key(&SocialIdentity::new("", "", ""), b"pk"),
        )
        .unwrap();
    alice.flush().unwrap();
    assert_eq!(w.server_items()[0].data.descriptor.sensitivity, Sensitivity::Public);
}
