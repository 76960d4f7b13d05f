//! An in-process server with a mock provider, and accounts that talk to it
//! through `Server::handle`.

use std::sync::Arc;

use peershare_core::clock::ManualClock;
use peershare_core::fixtures::FIXTURE_CREATED_AT;
use peershare_core::model::SocialIdentity;
use peershare_core::protocol::{RegisterBody, Request, RequestBody, Response, ResponseBody};
use peershare_core::provider::MockProvider;
use peershare_core::server::{Server, Store};

pub const NETWORK: &str = "mocknet";
pub const APP_ID: &str = "peershare-app";
/// Long enough to outlive any simulated episode.
pub const TOKEN_TTL: i64 = 10 * 365 * 86400;

pub struct World {
    pub clock: Arc<ManualClock>,
    pub provider: Arc<MockProvider>,
    pub server: Arc<Server>,
}

#[derive(Debug, Clone)]
pub struct Account {
    pub identity: SocialIdentity,
    pub token: String,
    pub peershare_id: Option<String>,
}

impl Default for World {
    fn default() -> Self {
        Self::new()
    }
}

impl World {
    pub fn new() -> Self {
        Self::with_store(Store::in_memory().expect("in-memory store"))
    }

    pub fn with_store(store: Store) -> Self {
        let clock = Arc::new(ManualClock::new(FIXTURE_CREATED_AT + 1000));
        let provider = Arc::new(MockProvider::new(NETWORK, clock.clone()));
        let server = Arc::new(Server::new(store, clock.clone()).with_provider(provider.clone(), APP_ID));
        Self {
            clock,
            provider,
            server,
        }
    }

    pub fn identity(name: &str) -> SocialIdentity {
        SocialIdentity::new(NETWORK, name, name)
    }

    /// Creates the user on the provider and hands out a token; not registered yet.
    pub fn account(&self, name: &str) -> Account {
        self.provider.add_user(name, name).expect("add user");
        Account {
            identity: Self::identity(name),
            token: self.provider.issue_token(name, APP_ID, TOKEN_TTL).expect("token").token,
            peershare_id: None,
        }
    }

    pub fn register(&self, account: &mut Account) -> String {
        let response = self.call(account, RequestBody::Register(RegisterBody::default()));
        match response.into_result() {
            Ok(ResponseBody::Register(r)) => {
                account.peershare_id = Some(r.peershare_id.clone());
                r.peershare_id
            }
            other => panic!("register failed: {other:?}"),
        }
    }

    pub fn registered(&self, name: &str) -> Account {
        let mut account = self.account(name);
        self.register(&mut account);
        account
    }

    pub fn request(account: &Account, body: RequestBody) -> Request {
        Request {
            token: account.token.clone(),
            identity: account.identity.clone(),
            peershare_id: account.peershare_id.clone(),
            body,
        }
    }

    pub fn call(&self, account: &Account, body: RequestBody) -> Response {
        self.server.handle(Self::request(account, body))
    }
}
