//! Frozen wire samples. Each file must decode and re-encode to exactly the
//! same bytes. Regenerate with `PEERSHARE_BLESS=1 cargo test --test golden -- --ignored`.

use std::path::PathBuf;

use peershare_core::fixtures;
use peershare_core::model::SharingPolicy;
use peershare_core::protocol::{
    decode_request, decode_response, encode_request, encode_response, DeleteBody, EmptyBody, Method, PolicyBody,
    Request, RequestBody, ResponseBody, UpdateBody, UpdateEntry, UploadBody, UploadItem,
};
use peershare_testkit::world::{Account, World};

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn path(method: Method, kind: &str) -> PathBuf {
    golden_dir().join(format!("{}.{kind}.json", method.as_str()))
}

#[test]
fn golden_requests_round_trip_byte_identically() {
    for method in Method::ALL {
        let bytes = std::fs::read(path(method, "request")).unwrap();
        let request = decode_request(&bytes).unwrap();
        assert_eq!(request.body.method(), method);
        assert_eq!(encode_request(&request), bytes, "{method:?}");
    }
}

#[test]
fn golden_responses_round_trip_byte_identically() {
    for method in Method::ALL {
        for kind in ["response", "error", "friend_view"] {
            let p = path(method, kind);
            if kind != "response" && !p.exists() {
                continue;
            }
            let bytes = std::fs::read(&p).unwrap();
            let response = decode_response(method, &bytes).unwrap();
            assert_eq!(encode_response(&response), bytes, "{}", p.display());
        }
    }
}

fn exchange(world: &World, account: &Account, body: RequestBody) -> (Vec<u8>, Vec<u8>) {
    let request: Request = World::request(account, body);
    let bytes = encode_request(&request);
    let response = world.server.handle_bytes(&bytes);
    (bytes, response)
}

#[test]
#[ignore = "writes the golden files"]
fn bless() {
    if std::env::var_os("PEERSHARE_BLESS").is_none() {
        return;
    }
    let world = World::new();
    let mut alice = world.account("alice");
    let bob = world.registered("bob");
    world.provider.befriend("alice", "bob").unwrap();
    let close = world.provider.create_list("alice", "close").unwrap();
    world.provider.add_to_list(&close, "bob").unwrap();

    let mut samples = Vec::new();
    let reg = exchange(&world, &alice, RequestBody::Register(Default::default()));
    alice.peershare_id = Some(
        match decode_response(Method::Register, &reg.1)
            .unwrap()
            .into_result()
            .unwrap()
        {
            ResponseBody::Register(r) => r.peershare_id,
            _ => unreachable!(),
        },
    );
    samples.push((Method::Register, reg, None));

    let mut item = fixtures::bdaddr_binding(&alice.identity, "dev-1", &[0x00, 0x1a, 0x7d, 0xda, 0x71, 0x13]);
    item.sharing_policy = Some(SharingPolicy::named(close.clone()));
    let upload = exchange(
        &world,
        &alice,
        RequestBody::Upload(UploadBody {
            items: vec![
                UploadItem {
                    op_key: Some("5d41402abc4b2a76b9719d911017c592".into()),
                    data: item.clone(),
                },
                UploadItem {
                    op_key: None,
                    data: fixtures::public_key(&alice.identity, b"-----BEGIN PUBLIC KEY-----"),
                },
            ],
        }),
    );
    samples.push((Method::Upload, upload, None));

    let mut moved = item.clone();
    moved.data_value = vec![0x00, 0x1a, 0x7d, 0xda, 0x71, 0x14];
    let update = exchange(
        &world,
        &alice,
        RequestBody::Update(UpdateBody {
            updates: vec![
                UpdateEntry {
                    object_id: 1,
                    data: moved,
                },
                UpdateEntry {
                    object_id: 99,
                    data: item.clone(),
                },
            ],
        }),
    );
    samples.push((Method::Update, update, None));

    let download = exchange(&world, &alice, RequestBody::Download(EmptyBody {}));
    let bob_download = exchange(&world, &bob, RequestBody::Download(EmptyBody {}));
    samples.push((Method::Download, download, Some(bob_download.1)));

    let policy = exchange(
        &world,
        &alice,
        RequestBody::Policy(PolicyBody {
            object_id: 2,
            sharing_policy: SharingPolicy::AllFriends,
        }),
    );
    let policy_err = exchange(
        &world,
        &bob,
        RequestBody::Policy(PolicyBody {
            object_id: 2,
            sharing_policy: SharingPolicy::AllFriends,
        }),
    );
    samples.push((Method::Policy, policy, Some(policy_err.1)));

    let delete = exchange(&world, &alice, RequestBody::Delete(DeleteBody { object_ids: vec![2] }));
    samples.push((Method::Delete, delete, None));

    let unregister = exchange(&world, &alice, RequestBody::Unregister(EmptyBody {}));
    let mut stranger = alice.clone();
    stranger.token = "expired-or-forged".into();
    let unregister_err = exchange(&world, &stranger, RequestBody::Unregister(EmptyBody {}));
    samples.push((Method::Unregister, unregister, Some(unregister_err.1)));

    std::fs::create_dir_all(golden_dir()).unwrap();
    for (method, (request, response), extra) in samples {
        std::fs::write(path(method, "request"), request).unwrap();
        std::fs::write(path(method, "response"), response).unwrap();
        if let Some(extra) = extra {
            let kind = if method == Method::Download {
                "friend_view"
            } else {
                "error"
            };
            std::fs::write(path(method, kind), extra).unwrap();
        }
    }
}
