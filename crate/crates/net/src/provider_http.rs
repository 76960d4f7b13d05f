//! The mock social network over plain HTTP, and a [`SocialProvider`] that
//! talks to it. The server runs the same trait on either side, so it cannot
//! tell the in-process mock from the remote one.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tracing::info;

use peershare_core::provider::{
    FriendListRef, GraphAck, GraphCommand, ListChangeEvent, MockProvider, ProviderError, ProviderToken, SocialProvider,
    TokenClaims,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
enum WireError {
    UnknownUser { id: String },
    UnknownList { id: String },
    ListNotOwned { list: String, owner: String },
    DuplicateUser { id: String },
    Unreachable { detail: String },
    Unsupported { what: String },
    BadRequest { detail: String },
}

impl From<ProviderError> for WireError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::UnknownUser(id) => WireError::UnknownUser { id },
            ProviderError::UnknownList(id) => WireError::UnknownList { id },
            ProviderError::ListNotOwned { list, owner } => WireError::ListNotOwned { list, owner },
            ProviderError::DuplicateUser(id) => WireError::DuplicateUser { id },
            ProviderError::Unreachable(detail) => WireError::Unreachable { detail },
            ProviderError::Unsupported(what) => WireError::Unsupported { what: what.into() },
        }
    }
}

impl WireError {
    fn into_provider_error(self) -> ProviderError {
        match self {
            WireError::UnknownUser { id } => ProviderError::UnknownUser(id),
            WireError::UnknownList { id } => ProviderError::UnknownList(id),
            WireError::ListNotOwned { list, owner } => ProviderError::ListNotOwned { list, owner },
            WireError::DuplicateUser { id } => ProviderError::DuplicateUser(id),
            WireError::Unreachable { detail } => ProviderError::Unreachable(detail),
            WireError::Unsupported { .. } => ProviderError::Unsupported("remote operation"),
            WireError::BadRequest { detail } => {
                ProviderError::Unreachable(format!("provider rejected request: {detail}"))
            }
        }
    }
}

struct ApiError(WireError);

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            WireError::UnknownUser { .. } | WireError::UnknownList { .. } => StatusCode::NOT_FOUND,
            WireError::ListNotOwned { .. } => StatusCode::FORBIDDEN,
            WireError::DuplicateUser { .. } => StatusCode::CONFLICT,
            WireError::Unreachable { .. } => StatusCode::SERVICE_UNAVAILABLE,
            WireError::Unsupported { .. } => StatusCode::NOT_IMPLEMENTED,
            WireError::BadRequest { .. } => StatusCode::BAD_REQUEST,
        };
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenRequest {
    pub user: String,
    pub app_id: String,
    pub ttl_secs: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Info {
    network: String,
    last_seq: u64,
}

#[derive(Deserialize)]
struct UserQuery {
    user: String,
}

#[derive(Deserialize)]
struct TokenQuery {
    input_token: String,
}

#[derive(Deserialize)]
struct ListQuery {
    list_id: String,
}

#[derive(Deserialize)]
struct ChangesQuery {
    #[serde(default)]
    after: u64,
}

#[derive(Serialize, Deserialize)]
struct Members {
    list: FriendListRef,
    members: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct Reachable {
    reachable: bool,
}

type Shared = State<Arc<MockProvider>>;

pub fn router(provider: Arc<MockProvider>) -> Router {
    Router::new()
        .route("/info", get(info))
        .route("/token", post(token))
        .route("/debug_token", get(debug_token))
        .route("/friends", get(friends))
        .route("/lists", get(lists))
        .route("/list_members", get(list_members))
        .route("/changes", get(changes))
        .route("/graph", post(graph))
        .route("/snapshot", get(snapshot))
        .route("/reachable", post(reachable))
        .with_state(provider)
}

async fn info(State(p): Shared) -> Json<Info> {
    Json(Info {
        network: p.network().to_string(),
        last_seq: p.last_seq(),
    })
}

async fn token(State(p): Shared, Json(r): Json<TokenRequest>) -> ApiResult<ProviderToken> {
    if r.app_id.is_empty() {
        return Err(ApiError(WireError::BadRequest {
            detail: "empty app_id".into(),
        }));
    }
    Ok(Json(p.issue_token(&r.user, &r.app_id, r.ttl_secs)?))
}

async fn debug_token(State(p): Shared, Query(q): Query<TokenQuery>) -> ApiResult<TokenClaims> {
    Ok(Json(p.verify_token(&q.input_token)?))
}

async fn friends(State(p): Shared, Query(q): Query<UserQuery>) -> ApiResult<BTreeSet<String>> {
    Ok(Json(p.get_friends(&q.user)?))
}

async fn lists(State(p): Shared, Query(q): Query<UserQuery>) -> ApiResult<Vec<FriendListRef>> {
    Ok(Json(p.get_custom_lists(&q.user)?))
}

async fn list_members(State(p): Shared, Query(q): Query<ListQuery>) -> ApiResult<Members> {
    let (list, members) = p.list_members(&q.list_id)?;
    Ok(Json(Members { list, members }))
}

async fn changes(State(p): Shared, Query(q): Query<ChangesQuery>) -> ApiResult<Vec<ListChangeEvent>> {
    Ok(Json(p.poll_changes(q.after)?))
}

async fn graph(State(p): Shared, Json(command): Json<GraphCommand>) -> ApiResult<GraphAck> {
    Ok(Json(p.mutate(&command)?))
}

async fn snapshot(State(p): Shared) -> Json<serde_json::Value> {
    Json(serde_json::to_value(p.snapshot()).unwrap_or_default())
}

async fn reachable(State(p): Shared, Json(r): Json<Reachable>) -> StatusCode {
    p.set_reachable(r.reachable);
    StatusCode::NO_CONTENT
}

/// The provider service on its own runtime thread; stops when dropped.
pub struct RunningProvider {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningProvider {
    pub fn start(addr: SocketAddr, provider: Arc<MockProvider>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let app = router(provider);
        let thread = std::thread::Builder::new()
            .name("peershare-provider".into())
            .spawn(move || {
                let served = runtime.block_on(async {
                    axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = stopped.await;
                        })
                        .await
                });
                if let Err(e) = served {
                    tracing::error!(error = %e, "provider service failed");
                }
            })?;
        info!(%addr, "provider service listening");
        Ok(Self {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for RunningProvider {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

/// Client for the provider service.
#[derive(Clone)]
pub struct HttpProvider {
    base: String,
    network: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base", &self.base)
            .field("network", &self.network)
            .finish()
    }
}

fn unreachable(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Unreachable(e.to_string())
}

impl HttpProvider {
    pub fn new(base: impl Into<String>, network: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            network: network.into(),
            agent,
        }
    }

    /// Asks the service for its network name.
    pub fn connect(base: impl Into<String>) -> Result<Self, ProviderError> {
        let mut provider = Self::new(base, "");
        let info: Info = provider.get("/info", &[])?;
        provider.network = info.network;
        Ok(provider)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn read<T: DeserializeOwned>(mut response: ureq::http::Response<ureq::Body>) -> Result<T, ProviderError> {
        let status = response.status();
        let body = response.body_mut();
        if status.is_success() {
            return body.read_json().map_err(unreachable);
        }
        match body.read_json::<WireError>() {
            Ok(e) => Err(e.into_provider_error()),
            Err(_) => Err(unreachable(format!("HTTP {status}"))),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, &str)]) -> Result<T, ProviderError> {
        let mut request = self.agent.get(self.url(path));
        for (k, v) in query {
            request = request.query(k, v);
        }
        Self::read(request.call().map_err(unreachable)?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ProviderError> {
        Self::read(self.agent.post(self.url(path)).send_json(body).map_err(unreachable)?)
    }

    pub fn issue_token(&self, user: &str, app_id: &str, ttl_secs: i64) -> Result<ProviderToken, ProviderError> {
        self.post(
            "/token",
            &TokenRequest {
                user: user.into(),
                app_id: app_id.into(),
                ttl_secs,
            },
        )
    }

    pub fn mutate(&self, command: &GraphCommand) -> Result<GraphAck, ProviderError> {
        self.post("/graph", command)
    }

    pub fn snapshot(&self) -> Result<serde_json::Value, ProviderError> {
        self.get("/snapshot", &[])
    }

    pub fn set_reachable(&self, reachable: bool) -> Result<(), ProviderError> {
        let response = self
            .agent
            .post(self.url("/reachable"))
            .send_json(Reachable { reachable })
            .map_err(unreachable)?;
        if response.status().is_success() {
            Ok(())
        } else {
            Err(unreachable(format!("HTTP {}", response.status())))
        }
    }
}

impl SocialProvider for HttpProvider {
    fn network(&self) -> &str {
        &self.network
    }

    fn verify_token(&self, token: &str) -> Result<TokenClaims, ProviderError> {
        self.get("/debug_token", &[("input_token", token)])
    }

    fn get_friends(&self, user_social_id: &str) -> Result<BTreeSet<String>, ProviderError> {
        self.get("/friends", &[("user", user_social_id)])
    }

    fn get_custom_lists(&self, user_social_id: &str) -> Result<Vec<FriendListRef>, ProviderError> {
        self.get("/lists", &[("user", user_social_id)])
    }

    fn list_members(&self, list_id: &str) -> Result<(FriendListRef, BTreeSet<String>), ProviderError> {
        let m: Members = self.get("/list_members", &[("list_id", list_id)])?;
        Ok((m.list, m.members))
    }

    fn poll_changes(&self, after_seq: u64) -> Result<Vec<ListChangeEvent>, ProviderError> {
        self.get("/changes", &[("after", &after_seq.to_string())])
    }
}
