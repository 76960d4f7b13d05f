//! Requests with bad credentials for every method. Each must come back as
//! AUTH_ERROR and leave the server state byte-for-byte unchanged.

use peershare_core::fixtures;
use peershare_core::model::{SharingPolicy, SocialIdentity};
use peershare_core::protocol::{
    decode_response, encode_request, DeleteBody, EmptyBody, ErrorCode, Method, PolicyBody, RegisterBody, Request,
    RequestBody, Response, ResponseBody, UpdateBody, UpdateEntry, UploadBody, UploadItem,
};

use crate::world::{Account, World, TOKEN_TTL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attack {
    /// A token the provider never issued.
    Invalid,
    /// A genuine token for the right user, issued to another application.
    WrongApp,
    /// A genuine token belonging to a different user than the claimed identity.
    UserMismatch,
}

pub const ATTACKS: [Attack; 3] = [Attack::Invalid, Attack::WrongApp, Attack::UserMismatch];

#[derive(Debug, Clone)]
pub struct GauntletCase {
    pub attack: Attack,
    pub method: Method,
    pub passed: bool,
    pub note: String,
}

fn bodies(alice: &SocialIdentity, object_id: u64) -> Vec<RequestBody> {
    let upload = fixtures::bdaddr_binding(alice, "dev-9", &[9; 6]);
    let update = fixtures::bdaddr_binding(alice, "dev-1", &[3; 6]);
    vec![
        RequestBody::Register(RegisterBody::default()),
        RequestBody::Upload(UploadBody {
            items: vec![UploadItem {
                op_key: None,
                data: upload,
            }],
        }),
        RequestBody::Download(EmptyBody {}),
        RequestBody::Update(UpdateBody {
            updates: vec![UpdateEntry {
                object_id,
                data: update,
            }],
        }),
        RequestBody::Delete(DeleteBody {
            object_ids: vec![object_id],
        }),
        RequestBody::Policy(PolicyBody {
            object_id,
            sharing_policy: SharingPolicy::named("close-friends"),
        }),
        RequestBody::Unregister(EmptyBody {}),
    ]
}

/// Runs the 3 x 7 cases against a populated server.
pub fn run_gauntlet() -> Vec<GauntletCase> {
    let world = World::new();
    let alice = world.registered("alice");
    let bob = world.registered("bob");
    world.provider.befriend("alice", "bob").expect("friends");
    let uploaded = world.call(
        &alice,
        RequestBody::Upload(UploadBody {
            items: vec![UploadItem {
                op_key: None,
                data: fixtures::bdaddr_binding(&alice.identity, "dev-1", &[1; 6]),
            }],
        }),
    );
    let object_id = match uploaded.into_result() {
        Ok(ResponseBody::Upload(r)) => r.object_ids[0],
        other => panic!("setup upload failed: {other:?}"),
    };
    // A user the provider knows but the server does not; a successful
    // REGISTER with a forged token would show up in the state hash.
    let carol = world.account("carol");
    let wrong_app = world
        .provider
        .issue_token("alice", "some-other-app", TOKEN_TTL)
        .expect("token")
        .token;

    let mut cases = Vec::new();
    for attack in ATTACKS {
        for body in bodies(&alice.identity, object_id) {
            let method = body.method();
            let target: &Account = if method == Method::Register { &carol } else { &alice };
            let token = match attack {
                Attack::Invalid => "not-a-token-0000".to_string(),
                Attack::WrongApp if method == Method::Register => {
                    world
                        .provider
                        .issue_token("carol", "some-other-app", TOKEN_TTL)
                        .expect("token")
                        .token
                }
                Attack::WrongApp => wrong_app.clone(),
                Attack::UserMismatch => bob.token.clone(),
            };
            let request = Request {
                token,
                identity: target.identity.clone(),
                peershare_id: target.peershare_id.clone(),
                body,
            };
            let before = world.server.state_digest().expect("digest");
            let bytes = world.server.handle_bytes(&encode_request(&request));
            let after = world.server.state_digest().expect("digest");
            let (passed, note) = match decode_response(method, &bytes) {
                Ok(Response::Error(e)) if e.code == ErrorCode::AuthError && before == after => (true, String::new()),
                Ok(Response::Error(e)) if e.code == ErrorCode::AuthError => (false, "state changed".into()),
                Ok(other) => (false, format!("got {other:?}")),
                Err(e) => (false, format!("undecodable response: {e}")),
            };
            cases.push(GauntletCase {
                attack,
                method,
                passed,
                note,
            });
        }
    }
    cases
}
