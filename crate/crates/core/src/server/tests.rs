use std::sync::Arc;

use super::*;
use crate::clock::ManualClock;
use crate::fixtures;
use crate::protocol::{UpdateEntry, UploadItem};
use crate::provider::MockProvider;

const APP: &str = "peershare-app";
const NET: &str = "mocknet";

struct Harness {
    clock: Arc<ManualClock>,
    provider: Arc<MockProvider>,
    server: Server,
}

struct User {
    identity: SocialIdentity,
    token: String,
    peershare_id: String,
}

impl Harness {
    fn new() -> Self {
        let clock = Arc::new(ManualClock::new(fixtures::FIXTURE_CREATED_AT + 10));
        let provider = Arc::new(MockProvider::new(NET, clock.clone()));
        let server = Server::new(Store::in_memory().unwrap(), clock.clone()).with_provider(provider.clone(), APP);
        Self {
            clock,
            provider,
            server,
        }
    }

    fn user(&self, name: &str) -> User {
        self.provider.add_user(name, name).unwrap();
        let mut user = self.login(name);
        let registered = self.call(&user, RequestBody::Register(RegisterBody::default()));
        let ResponseBody::Register(r) = registered.into_result().unwrap() else {
            panic!()
        };
        user.peershare_id = r.peershare_id;
        user
    }

    fn login(&self, name: &str) -> User {
        User {
            identity: SocialIdentity::new(NET, name, name),
            token: self.provider.issue_token(name, APP, 3600).unwrap().token,
            peershare_id: String::new(),
        }
    }

    fn call(&self, user: &User, body: RequestBody) -> Response {
        let peershare_id = (!user.peershare_id.is_empty()).then(|| user.peershare_id.clone());
        self.server.handle(Request {
            token: user.token.clone(),
            identity: user.identity.clone(),
            peershare_id,
            body,
        })
    }

    fn upload(&self, user: &User, items: Vec<AppData>) -> Result<UploadResult, ErrorInfo> {
        let items = items
            .into_iter()
            .map(|data| UploadItem { op_key: None, data })
            .collect();
        match self
            .call(user, RequestBody::Upload(UploadBody { items }))
            .into_result()?
        {
            ResponseBody::Upload(r) => Ok(r),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn download(&self, user: &User) -> Vec<crate::model::ItemView> {
        match self
            .call(user, RequestBody::Download(EmptyBody {}))
            .into_result()
            .unwrap()
        {
            ResponseBody::Download(r) => r.items,
            other => panic!("unexpected {other:?}"),
        }
    }

    fn update(&self, user: &User, object_id: u64, data: AppData) -> EntryStatus {
        let body = UpdateBody {
            updates: vec![UpdateEntry { object_id, data }],
        };
        match self.call(user, RequestBody::Update(body)).into_result().unwrap() {
            ResponseBody::Update(r) => r.results[0].status,
            other => panic!("unexpected {other:?}"),
        }
    }

    fn policy(&self, user: &User, object_id: u64, sharing_policy: SharingPolicy) -> Response {
        self.call(
            user,
            RequestBody::Policy(PolicyBody {
                object_id,
                sharing_policy,
            }),
        )
    }
}

fn bdaddr(user: &User, value: u8) -> AppData {
    fixtures::bdaddr_binding(&user.identity, "dev-1", &[value; 6])
}

#[test]
fn register_is_idempotent() {
    let h = Harness::new();
    let alice = h.user("alice");
    assert!(alice.peershare_id.starts_with("ps-"));
    let again = h.call(&h.login("alice"), RequestBody::Register(RegisterBody::default()));
    let ResponseBody::Register(r) = again.into_result().unwrap() else {
        panic!()
    };
    assert_eq!(r.peershare_id, alice.peershare_id);
}

#[test]
fn second_network_identity_links_with_proof() {
    let clock = Arc::new(ManualClock::new(100));
    let first = Arc::new(MockProvider::new(NET, clock.clone()));
    let second = Arc::new(MockProvider::new("othernet", clock.clone()));
    let server = Server::new(Store::in_memory().unwrap(), clock)
        .with_provider(first.clone(), APP)
        .with_provider(second.clone(), APP);
    first.add_user("alice", "Alice").unwrap();
    second.add_user("a.l", "Alice").unwrap();
    let alice = SocialIdentity::new(NET, "alice", "Alice");
    let alice_token = first.issue_token("alice", APP, 60).unwrap().token;
    let r = server.handle(Request {
        token: alice_token.clone(),
        identity: alice.clone(),
        peershare_id: None,
        body: RequestBody::Register(RegisterBody::default()),
    });
    let ResponseBody::Register(RegisterResult { peershare_id }) = r.into_result().unwrap() else {
        panic!()
    };

    let other = SocialIdentity::new("othernet", "a.l", "Alice");
    let other_token = second.issue_token("a.l", APP, 60).unwrap().token;
    let link = |existing_token: Option<String>| {
        server.handle(Request {
            token: other_token.clone(),
            identity: other.clone(),
            peershare_id: None,
            body: RequestBody::Register(RegisterBody {
                existing_peershare_id: Some(peershare_id.clone()),
                existing_identity: Some(alice.clone()),
                existing_token,
            }),
        })
    };
    assert_eq!(link(None).error_code(), Some(ErrorCode::AuthError));
    assert_eq!(link(Some("forged".into())).error_code(), Some(ErrorCode::AuthError));
    let ResponseBody::Register(linked) = link(Some(alice_token)).into_result().unwrap() else {
        panic!()
    };
    assert_eq!(linked.peershare_id, peershare_id);
    assert_eq!(server.identities_of(&peershare_id).unwrap().len(), 2);
}

#[test]
fn token_checks() {
    let h = Harness::new();
    let alice = h.user("alice");
    h.user("bob");

    let mut evil = h.login("alice");
    evil.peershare_id = alice.peershare_id.clone();
    evil.token = h.provider.issue_token("alice", "evil-app", 60).unwrap().token;
    assert_eq!(
        h.call(&evil, RequestBody::Download(EmptyBody {})).error_code(),
        Some(ErrorCode::AuthError)
    );

    // bob's valid token presented with alice's identity
    let mut mismatch = h.login("bob");
    mismatch.identity = alice.identity.clone();
    mismatch.peershare_id = alice.peershare_id.clone();
    assert_eq!(
        h.call(&mismatch, RequestBody::Download(EmptyBody {})).error_code(),
        Some(ErrorCode::AuthError)
    );

    assert!(h
        .call(&alice, RequestBody::Download(EmptyBody {}))
        .into_result()
        .is_ok());
}

#[test]
fn blank_token_is_auth_error_before_schema() {
    let h = Harness::new();
    let response = h
        .server
        .handle_bytes(br#"{"v":1,"method":"upload","token":"","body":{}}"#);
    let text = String::from_utf8(response).unwrap();
    assert!(text.contains("AUTH_ERROR"), "{text}");
}

#[test]
fn upload_defaults_to_all_friends() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    let carol = h.user("carol");
    h.provider.befriend("alice", "bob").unwrap();

    let r = h.upload(&alice, vec![bdaddr(&alice, 1)]).unwrap();
    assert_eq!(r.object_ids.len(), 1);

    let seen = h.download(&bob);
    assert_eq!(seen.len(), 1);
    assert!(!seen[0].is_owner);
    assert_eq!(seen[0].object_id, None);
    assert_eq!(seen[0].data.sharing_policy, None);
    assert!(h.download(&carol).is_empty());

    let own = h.download(&alice);
    assert_eq!(own[0].object_id, Some(r.object_ids[0]));
    assert_eq!(own[0].data.sharing_policy, Some(SharingPolicy::AllFriends));
}

#[test]
fn user_specific_upload_replaces_previous() {
    let h = Harness::new();
    let alice = h.user("alice");
    let first = h
        .upload(&alice, vec![fixtures::bearer_token(&alice.identity, b"one")])
        .unwrap();
    let second = h
        .upload(&alice, vec![fixtures::bearer_token(&alice.identity, b"two")])
        .unwrap();
    assert_eq!(second.replaced, first.object_ids);
    let own = h.download(&alice);
    assert_eq!(own.len(), 1);
    assert_eq!(own[0].data.data_value, b"two");
    assert_eq!(
        h.update(
            &alice,
            first.object_ids[0],
            fixtures::bearer_token(&alice.identity, b"x")
        ),
        EntryStatus::NotFoundRemove
    );
}

#[test]
fn upload_batch_is_atomic() {
    let h = Harness::new();
    let alice = h.user("alice");
    let before = h.server.state_digest().unwrap();
    let mut bad = bdaddr(&alice, 2);
    bad.data_type.clear();
    let err = h
        .upload(&alice, vec![bdaddr(&alice, 1), bad, bdaddr(&alice, 3)])
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::ValidationError);
    assert_eq!(err.detail.len(), 1);
    assert_eq!(err.detail[0].index, Some(1));
    assert_eq!(h.server.state_digest().unwrap(), before);
}

#[test]
fn upload_for_someone_else_is_refused() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    let err = h.upload(&alice, vec![bdaddr(&bob, 1)]).unwrap_err();
    assert_eq!(err.code, ErrorCode::AuthError);
}

#[test]
fn op_key_retry_does_not_duplicate() {
    let h = Harness::new();
    let alice = h.user("alice");
    let item = UploadItem {
        op_key: Some("k-1".into()),
        data: bdaddr(&alice, 1),
    };
    let send = || {
        h.call(
            &alice,
            RequestBody::Upload(UploadBody {
                items: vec![item.clone()],
            }),
        )
        .into_result()
        .unwrap()
    };
    let (ResponseBody::Upload(a), ResponseBody::Upload(b)) = (send(), send()) else {
        panic!()
    };
    assert_eq!(a.object_ids, b.object_ids);
    assert_eq!(h.server.all_items().unwrap().len(), 1);
}

#[test]
fn update_paths() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    let id = h.upload(&alice, vec![bdaddr(&alice, 1)]).unwrap().object_ids[0];

    assert_eq!(h.update(&alice, id, bdaddr(&alice, 9)), EntryStatus::Ok);
    assert_eq!(h.download(&alice)[0].data.data_value, vec![9; 6]);

    assert_eq!(h.update(&bob, id, bdaddr(&bob, 7)), EntryStatus::AuthError);
    assert_eq!(h.download(&alice)[0].data.data_value, vec![9; 6]);

    assert_eq!(h.update(&alice, 99, bdaddr(&alice, 1)), EntryStatus::NotFoundRemove);

    let mut moved = bdaddr(&alice, 1);
    moved.device_id = "dev-2".into();
    assert_eq!(h.update(&alice, id, moved), EntryStatus::ValidationError);
}

#[test]
fn update_of_expired_item_is_not_found_remove() {
    let h = Harness::new();
    let alice = h.user("alice");
    let mut item = bdaddr(&alice, 1);
    item.expires_at = h.clock.now() + 5;
    let id = h.upload(&alice, vec![item.clone()]).unwrap().object_ids[0];
    h.clock.advance(5);
    assert_eq!(h.update(&alice, id, item), EntryStatus::NotFoundRemove);
}

#[test]
fn delete_is_per_id() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    h.provider.befriend("alice", "bob").unwrap();
    let ids = h
        .upload(
            &alice,
            vec![bdaddr(&alice, 1), fixtures::public_key(&alice.identity, b"pk")],
        )
        .unwrap()
        .object_ids;

    let denied = h.call(
        &bob,
        RequestBody::Delete(DeleteBody {
            object_ids: vec![ids[0]],
        }),
    );
    assert_eq!(denied.error_code(), Some(ErrorCode::PartialFailure));
    assert_eq!(h.download(&bob).len(), 2);

    let partial = h.call(
        &alice,
        RequestBody::Delete(DeleteBody {
            object_ids: vec![ids[0], 4242],
        }),
    );
    let err = partial.into_result().unwrap_err();
    assert_eq!(err.code, ErrorCode::PartialFailure);
    assert_eq!(err.detail.len(), 1);
    assert_eq!(err.detail[0].object_id, Some(4242));
    assert_eq!(h.download(&bob).len(), 1);
}

#[test]
fn unregister_removes_everything_and_next_id_is_fresh() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    h.provider.befriend("alice", "bob").unwrap();
    h.upload(&alice, vec![bdaddr(&alice, 1)]).unwrap();
    assert!(h
        .call(&alice, RequestBody::Unregister(EmptyBody {}))
        .into_result()
        .is_ok());
    assert!(h.download(&bob).is_empty());
    assert_eq!(
        h.call(&alice, RequestBody::Download(EmptyBody {})).error_code(),
        Some(ErrorCode::AuthError)
    );

    let again = h.call(&h.login("alice"), RequestBody::Register(RegisterBody::default()));
    let ResponseBody::Register(r) = again.into_result().unwrap() else {
        panic!()
    };
    assert_ne!(r.peershare_id, alice.peershare_id);
}

#[test]
fn policy_override_narrows_and_survives_app_update() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    let carol = h.user("carol");
    h.provider.befriend("alice", "bob").unwrap();
    h.provider.befriend("alice", "carol").unwrap();
    let close = h.provider.create_list("alice", "close").unwrap();
    h.provider.add_to_list(&close, "bob").unwrap();

    let id = h.upload(&alice, vec![bdaddr(&alice, 1)]).unwrap().object_ids[0];
    assert_eq!(h.download(&carol).len(), 1);
    assert!(h.policy(&alice, id, SharingPolicy::named(&close)).into_result().is_ok());
    assert!(h.download(&carol).is_empty());
    assert_eq!(h.download(&bob).len(), 1);

    let mut widened = bdaddr(&alice, 2);
    widened.sharing_policy = Some(SharingPolicy::AllFriends);
    assert_eq!(h.update(&alice, id, widened), EntryStatus::Ok);
    let own = h.download(&alice);
    assert_eq!(own[0].data.sharing_policy, Some(SharingPolicy::named(&close)));
    assert_eq!(own[0].policy_source, Some(PolicySource::UserOverride));
    assert!(h.download(&carol).is_empty());

    assert_eq!(
        h.policy(&alice, 777, SharingPolicy::AllFriends).error_code(),
        Some(ErrorCode::NotFound)
    );
    assert_eq!(
        h.policy(&bob, id, SharingPolicy::AllFriends).error_code(),
        Some(ErrorCode::AclDenied)
    );
}

#[test]
fn graph_changes_update_eligibility() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    h.provider.befriend("alice", "bob").unwrap();
    let close = h.provider.create_list("alice", "close").unwrap();
    h.provider.add_to_list(&close, "bob").unwrap();
    let mut listed = fixtures::public_key(&alice.identity, b"pk");
    listed.sharing_policy = Some(SharingPolicy::named(&close));
    h.upload(&alice, vec![bdaddr(&alice, 1), listed]).unwrap();
    h.server.drain_changes().unwrap();
    assert_eq!(h.download(&bob).len(), 2);

    h.provider.remove_from_list(&close, "bob").unwrap();
    h.server.drain_changes().unwrap();
    let seen = h.download(&bob);
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].data.data_type, fixtures::BDADDR_BINDING);

    h.provider.unfriend("alice", "bob").unwrap();
    h.server.drain_changes().unwrap();
    assert!(h.download(&bob).is_empty());
}

#[test]
fn event_for_user_without_items_is_a_noop() {
    let h = Harness::new();
    h.user("alice");
    h.user("bob");
    let before = h.server.all_items().unwrap();
    h.provider.befriend("alice", "bob").unwrap();
    assert_eq!(h.server.drain_changes().unwrap(), 2);
    assert_eq!(h.server.all_items().unwrap(), before);
}

#[test]
fn provider_outage_keeps_cursor() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    h.upload(&alice, vec![bdaddr(&alice, 1)]).unwrap();
    h.provider.befriend("alice", "bob").unwrap();
    h.provider.set_reachable(false);
    assert!(h.server.drain_changes().is_err());
    h.provider.set_reachable(true);
    assert!(h.server.drain_changes().unwrap() > 0);
    assert_eq!(h.download(&bob).len(), 1);
}

#[test]
fn purge_expired() {
    let h = Harness::new();
    let alice = h.user("alice");
    let bob = h.user("bob");
    h.provider.befriend("alice", "bob").unwrap();
    assert_eq!(h.server.purge_expired(h.clock.now()).unwrap(), 0);
    let mut item = bdaddr(&alice, 1);
    item.expires_at = h.clock.now() + 1;
    h.upload(&alice, vec![item, fixtures::public_key(&alice.identity, b"pk")])
        .unwrap();
    h.clock.advance(1);
    let before_purge = h.download(&bob);
    assert_eq!(before_purge.len(), 1);
    assert_eq!(h.server.purge_expired(h.clock.now()).unwrap(), 1);
    assert_eq!(h.download(&bob), before_purge);
}

#[test]
fn object_ids_strictly_increase() {
    let h = Harness::new();
    let alice = h.user("alice");
    let mut last = 0;
    for i in 0..5 {
        let id = h
            .upload(&alice, vec![fixtures::bearer_token(&alice.identity, &[i])])
            .unwrap()
            .object_ids[0];
        assert!(id > last);
        last = id;
    }
}
