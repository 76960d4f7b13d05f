//! The device-side PeerShare service ("agent"): applications hand it items,
//! it keeps them in a local store, uploads owner-asserted ones when the server
//! is reachable and periodically fetches what friends shared.
//!
//! Every mutating API call is checked against the application that created
//! the item. Pending server operations carry a client-generated idempotency
//! key so a retry after a lost response never duplicates an item.

pub mod store;
pub mod transport;

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::clock::Clock;
use crate::model::{
    is_live, validate_app_data, AppData, AppIdentity, BindingType, ItemView, SharingPolicy, SocialIdentity, Specificity,
};
use crate::protocol::{
    decode_response, encode_request, DeleteBody, EmptyBody, EntryStatus, ErrorCode, ErrorInfo, Method, PolicyBody,
    RegisterBody, Request, RequestBody, ResponseBody, UpdateBody, UpdateEntry, UploadBody, UploadItem,
};
use crate::provider::SocialProvider;
use crate::server::Backoff;

pub use store::{LocalItem, LocalStore, LocalStoreError, RemoteItem, SyncState};
pub use transport::{Fault, FlakyTransport, InProcessTransport, RecordingTransport, Transport, TransportError};

pub const DEFAULT_REFRESH_INTERVAL: i64 = 6 * 60 * 60;

#[derive(Debug, Clone)]
pub struct AgentConfig {
    /// Directory holding one store per user; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Seconds between scheduled refreshes.
    pub refresh_interval: i64,
    /// Filled into device-specific items that arrive without one.
    pub device_id: String,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            data_dir: None,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
            device_id: "device-1".into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("no user is logged in")]
    NotAuthenticated,
    #[error("invalid item: {0}")]
    Validation(String),
    #[error("no item with handle {0}")]
    NotFound(u64),
    #[error("item {0} was created by another application")]
    AclDenied(u64),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server refused: {0}")]
    Server(ErrorInfo),
    #[error("bad server response: {0}")]
    Protocol(String),
    #[error("social provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error(transparent)]
    Store(#[from] LocalStoreError),
}

impl From<rusqlite::Error> for ClientError {
    fn from(e: rusqlite::Error) -> Self {
        ClientError::Store(LocalStoreError::Sqlite(e))
    }
}

impl ClientError {
    /// Worth retrying later without any change on the caller's side.
    pub fn is_transient(&self) -> bool {
        matches!(self, ClientError::Transport(_))
            || matches!(self, ClientError::Server(info) if info.code == ErrorCode::ServerError)
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// One entry of `get_shared_data_detail`: either an item held by this agent
/// or a view downloaded from the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedItem {
    #[serde(flatten)]
    pub data: AppData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u64>,
    pub is_owner: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MySocialData {
    pub identity: SocialIdentity,
    /// Absent until the server has been reached once.
    pub peershare_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyOption {
    pub policy: SharingPolicy,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclPolicies {
    pub options: Vec<PolicyOption>,
    /// True when the provider could not be reached and a cached copy is returned.
    pub stale: bool,
    pub fetched_at: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushSummary {
    pub uploaded: usize,
    pub updated: usize,
    pub deleted: usize,
    /// Local items dropped because the server no longer has them.
    pub purged: usize,
    /// Local ids the server refused; they are dropped (uploads) or left as
    /// they are locally (updates).
    pub rejected: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefreshSummary {
    pub flushed: FlushSummary,
    pub fetched: usize,
    /// Synced local items dropped because the server no longer lists them.
    pub purged: usize,
}

struct Session {
    identity: SocialIdentity,
    token: String,
    store: LocalStore,
}

impl Session {
    fn peershare_id(&self) -> ClientResult<Option<String>> {
        Ok(store::get_meta(self.store.conn(), "peershare_id")?)
    }
}

pub struct Agent {
    config: AgentConfig,
    transport: Arc<dyn Transport>,
    provider: Option<Arc<dyn SocialProvider>>,
    clock: Arc<dyn Clock>,
    session: Mutex<Option<Session>>,
    refreshing: AtomicBool,
    retry: Mutex<(Backoff, i64)>,
}

const NEXT_REFRESH_AT: &str = "next_refresh_at";

impl Agent {
    pub fn new(config: AgentConfig, transport: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        let backoff = Backoff::new(
            std::time::Duration::from_secs(30),
            std::time::Duration::from_secs(config.refresh_interval.max(30) as u64),
        );
        Self {
            config,
            transport,
            provider: None,
            clock,
            session: Mutex::new(None),
            refreshing: AtomicBool::new(false),
            retry: Mutex::new((backoff, 0)),
        }
    }

    /// Source of the user's custom lists for `get_acl_policies`.
    pub fn with_provider(mut self, provider: Arc<dyn SocialProvider>) -> Self {
        self.provider = Some(provider);
        self
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    fn lock(&self) -> MutexGuard<'_, Option<Session>> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Makes `identity` the current user, opening its store. Registration is
    /// attempted right away but an unreachable server is not an error: it is
    /// retried by the next flush.
    pub fn login(&self, identity: SocialIdentity, token: impl Into<String>) -> ClientResult<()> {
        let mut guard = self.lock();
        // Release the previous user's store first; it may be the same file.
        *guard = None;
        let store = match &self.config.data_dir {
            Some(dir) => LocalStore::open(&store::store_path(dir, &identity))?,
            None => LocalStore::in_memory()?,
        };
        store::set_meta(
            store.conn(),
            "identity",
            &serde_json::to_string(&identity).map_err(LocalStoreError::from)?,
        )?;
        let mut session = Session {
            identity,
            token: token.into(),
            store,
        };
        match self.ensure_registered(&mut session) {
            Ok(id) => info!(peershare_id = %id, "logged in"),
            Err(e) if e.is_transient() => debug!(error = %e, "registration postponed"),
            Err(e) => return Err(e),
        }
        *guard = Some(session);
        Ok(())
    }

    pub fn logout(&self) {
        *self.lock() = None;
    }

    /// Replaces the access token of the current session, e.g. after expiry.
    pub fn set_token(&self, token: impl Into<String>) -> ClientResult<()> {
        let mut guard = self.lock();
        let session = guard.as_mut().ok_or(ClientError::NotAuthenticated)?;
        session.token = token.into();
        Ok(())
    }

    fn call(&self, session: &Session, peershare_id: Option<String>, body: RequestBody) -> ClientResult<ResponseBody> {
        let method = body.method();
        let request = Request {
            token: session.token.clone(),
            identity: session.identity.clone(),
            peershare_id,
            body,
        };
        let bytes = self.transport.send(method, &encode_request(&request))?;
        let response = decode_response(method, &bytes).map_err(|e| ClientError::Protocol(e.to_string()))?;
        response.into_result().map_err(ClientError::Server)
    }

    fn ensure_registered(&self, session: &mut Session) -> ClientResult<String> {
        if let Some(id) = session.peershare_id()? {
            return Ok(id);
        }
        match self.call(session, None, RequestBody::Register(RegisterBody::default()))? {
            ResponseBody::Register(r) => {
                store::set_meta(session.store.conn(), "peershare_id", &r.peershare_id)?;
                Ok(r.peershare_id)
            }
            other => Err(unexpected(Method::Register, &other)),
        }
    }

    /// Stores a new item for `caller` and returns its handle. Owner-asserted
    /// items are queued for upload; user-asserted ones never leave the device.
    pub fn add_data(&self, caller: &AppIdentity, mut data: AppData) -> ClientResult<u64> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        data.creator = caller.clone();
        self.complete(session, &mut data);
        check_local(session, &data)?;
        let sync = match data.descriptor.binding_type {
            BindingType::OwnerAsserted => SyncState::PendingUpload,
            BindingType::UserAsserted => SyncState::LocalOnly,
        };
        let local_id = store::insert_item(session.store.conn(), &data, caller, sync, &new_op_key())?;
        debug!(local_id, %caller, sync = sync.as_str(), "item added");
        Ok(local_id)
    }

    /// Fills fields the service is responsible for.
    fn complete(&self, session: &Session, data: &mut AppData) {
        if data.owner.network.is_empty() && data.owner.social_id.is_empty() {
            data.owner = session.identity.clone();
        }
        if data.created_at == 0 {
            data.created_at = self.clock.now();
        }
        if data.descriptor.specificity == Specificity::Device && data.device_id.is_empty() {
            data.device_id = self.config.device_id.clone();
        }
    }

    fn owned_item(session: &Session, caller: &AppIdentity, local_id: u64) -> ClientResult<LocalItem> {
        let item = store::get_item(session.store.conn(), local_id)?
            .filter(|item| item.sync != SyncState::PendingDelete)
            .ok_or(ClientError::NotFound(local_id))?;
        if &item.creator != caller {
            return Err(ClientError::AclDenied(local_id));
        }
        Ok(item)
    }

    /// Replaces an item's data. Only the creating application may do this,
    /// and the item keeps its type, specificity, device and binding type.
    pub fn update_data(&self, caller: &AppIdentity, local_id: u64, mut data: AppData) -> ClientResult<()> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        let item = Self::owned_item(session, caller, local_id)?;
        data.creator = item.creator.clone();
        self.complete(session, &mut data);
        check_local(session, &data)?;
        let old = &item.data;
        if data.data_type != old.data_type
            || data.descriptor.specificity != old.descriptor.specificity
            || data.device_id != old.device_id
            || data.descriptor.binding_type != old.descriptor.binding_type
            || !data.owner.same_account(&old.owner)
        {
            return Err(ClientError::Validation(
                "data_type, specificity, device_id, binding_type and owner cannot change".into(),
            ));
        }
        let sync = match item.sync {
            SyncState::Synced | SyncState::PendingUpdate => SyncState::PendingUpdate,
            other => other,
        };
        store::set_data(session.store.conn(), local_id, &data, sync)?;
        Ok(())
    }

    /// Removes an item. Items the server may know about are tombstoned until
    /// the server confirms the deletion.
    pub fn remove_data(&self, caller: &AppIdentity, local_id: u64) -> ClientResult<()> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        let item = Self::owned_item(session, caller, local_id)?;
        let conn = session.store.conn();
        match item.sync {
            SyncState::LocalOnly => store::delete_item(conn, local_id)?,
            SyncState::PendingUpload if !item.attempted => store::delete_item(conn, local_id)?,
            _ => store::set_sync(conn, local_id, SyncState::PendingDelete)?,
        }
        Ok(())
    }

    /// Live items visible to this user, optionally of one `data_type`: the
    /// user's own items held here plus everything downloaded at the last refresh.
    pub fn get_shared_data_detail(
        &self,
        _caller: &AppIdentity,
        data_type: Option<&str>,
    ) -> ClientResult<Vec<SharedItem>> {
        let guard = self.lock();
        let Some(session) = guard.as_ref() else {
            return Ok(Vec::new());
        };
        let now = self.clock.now();
        let wanted = |data: &AppData| is_live(data, now) && data_type.is_none_or(|t| t == data.data_type);
        let local = store::all_items(session.store.conn())?;
        let mut out = Vec::new();
        for item in &local {
            if item.sync == SyncState::PendingDelete || !wanted(&item.data) {
                continue;
            }
            out.push(SharedItem {
                data: item.data.clone(),
                local_id: Some(item.local_id),
                object_id: (item.object_id != 0).then_some(item.object_id),
                is_owner: item.data.descriptor.binding_type == BindingType::OwnerAsserted,
                sync: Some(item.sync),
            });
        }
        for remote in store::remote_items(session.store.conn())? {
            let view = remote.view;
            let held_here = view
                .object_id
                .is_some_and(|id| local.iter().any(|item| item.object_id == id));
            if held_here || !wanted(&view.data) {
                continue;
            }
            out.push(SharedItem {
                data: view.data,
                local_id: None,
                object_id: view.object_id,
                is_owner: view.is_owner,
                sync: None,
            });
        }
        Ok(out)
    }

    pub fn get_my_social_data(&self) -> ClientResult<MySocialData> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        Ok(MySocialData {
            identity: session.identity.clone(),
            peershare_id: session.peershare_id()?,
        })
    }

    /// Policies an application may attach to items: all friends plus one per
    /// custom list. Falls back to the last fetched set when the provider is down.
    pub fn get_acl_policies(&self) -> ClientResult<AclPolicies> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        let conn = session.store.conn();
        let fetched = match &self.provider {
            Some(provider) => provider
                .get_custom_lists(&session.identity.social_id)
                .map_err(|e| ClientError::ProviderUnavailable(e.to_string())),
            None => Err(ClientError::ProviderUnavailable("no provider configured".into())),
        };
        match fetched {
            Ok(lists) => {
                let mut options = vec![PolicyOption {
                    policy: SharingPolicy::AllFriends,
                    display_name: "All friends".into(),
                }];
                options.extend(lists.into_iter().map(|list| PolicyOption {
                    policy: SharingPolicy::named(list.list_id),
                    display_name: list.display_name,
                }));
                let result = AclPolicies {
                    options,
                    stale: false,
                    fetched_at: self.clock.now(),
                };
                store::set_meta(
                    conn,
                    "acl_cache",
                    &serde_json::to_string(&result).map_err(LocalStoreError::from)?,
                )?;
                Ok(result)
            }
            Err(e) => match store::get_meta(conn, "acl_cache")? {
                Some(cached) => {
                    let mut result: AclPolicies = serde_json::from_str(&cached).map_err(LocalStoreError::from)?;
                    result.stale = true;
                    Ok(result)
                }
                None => Err(e),
            },
        }
    }

    /// Overrides the sharing policy of one of the user's items on the server.
    pub fn override_policy(&self, object_id: u64, sharing_policy: SharingPolicy) -> ClientResult<()> {
        let mut guard = self.lock();
        let session = guard.as_mut().ok_or(ClientError::NotAuthenticated)?;
        let peershare_id = self.ensure_registered(session)?;
        self.call(
            session,
            Some(peershare_id),
            RequestBody::Policy(PolicyBody {
                object_id,
                sharing_policy,
            }),
        )?;
        Ok(())
    }

    /// Every local record, including tombstones.
    pub fn local_items(&self) -> ClientResult<Vec<LocalItem>> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        Ok(store::all_items(session.store.conn())?)
    }

    /// The downloaded set as of the last successful refresh.
    pub fn remote_items(&self) -> ClientResult<Vec<RemoteItem>> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        Ok(store::remote_items(session.store.conn())?)
    }

    /// Sends every pending operation: uploads, then updates, then deletes,
    /// each in creation order. Stops at the first transport failure with the
    /// queue intact.
    pub fn flush(&self) -> ClientResult<FlushSummary> {
        let mut guard = self.lock();
        let session = guard.as_mut().ok_or(ClientError::NotAuthenticated)?;
        self.flush_session(session)
    }

    fn flush_session(&self, session: &mut Session) -> ClientResult<FlushSummary> {
        let mut summary = FlushSummary::default();
        let conn = session.store.conn();
        let pending = store::all_items(conn)?;
        if pending
            .iter()
            .all(|i| matches!(i.sync, SyncState::Synced | SyncState::LocalOnly))
        {
            return Ok(summary);
        }
        let peershare_id = self.ensure_registered(session)?;
        self.flush_uploads(session, &peershare_id, &mut summary)?;
        self.flush_updates(session, &peershare_id, &mut summary)?;
        self.flush_deletes(session, &peershare_id, &mut summary)?;
        Ok(summary)
    }

    fn flush_uploads(&self, session: &mut Session, peershare_id: &str, summary: &mut FlushSummary) -> ClientResult<()> {
        loop {
            let conn = session.store.conn();
            // Removed items whose upload may have landed go through upload
            // first so the server's object id is known for the delete.
            let batch: Vec<LocalItem> = store::all_items(conn)?
                .into_iter()
                .filter(|i| {
                    i.sync == SyncState::PendingUpload || (i.sync == SyncState::PendingDelete && i.object_id == 0)
                })
                .collect();
            if batch.is_empty() {
                return Ok(());
            }
            for item in &batch {
                store::mark_attempted(conn, item.local_id)?;
            }
            let body = UploadBody {
                items: batch
                    .iter()
                    .map(|i| UploadItem {
                        op_key: Some(i.op_key.clone()),
                        data: i.data.clone(),
                    })
                    .collect(),
            };
            match self.call(session, Some(peershare_id.to_string()), RequestBody::Upload(body)) {
                Ok(ResponseBody::Upload(result)) => {
                    if result.object_ids.len() != batch.len() {
                        return Err(ClientError::Protocol("upload result count mismatch".into()));
                    }
                    let tx = session.store.transaction()?;
                    for (item, &object_id) in batch.iter().zip(&result.object_ids) {
                        let sync = if item.sync == SyncState::PendingDelete {
                            SyncState::PendingDelete
                        } else {
                            summary.uploaded += 1;
                            SyncState::Synced
                        };
                        store::set_acked(&tx, item.local_id, object_id, sync)?;
                    }
                    for &gone in &result.replaced {
                        summary.purged += store::delete_by_object_id(&tx, gone)?;
                    }
                    tx.commit()?;
                    return Ok(());
                }
                Ok(other) => return Err(unexpected(Method::Upload, &other)),
                Err(ClientError::Server(info)) if !info.detail.is_empty() => {
                    // The batch was refused as a whole; drop the offending
                    // items and send the rest again.
                    let refused: Vec<&LocalItem> = info
                        .detail
                        .iter()
                        .filter_map(|d| d.index.and_then(|i| batch.get(i as usize)))
                        .collect();
                    if refused.is_empty() {
                        return Err(ClientError::Server(info));
                    }
                    let tx = session.store.transaction()?;
                    for item in refused {
                        warn!(local_id = item.local_id, code = %info.code, "server refused item");
                        store::delete_item(&tx, item.local_id)?;
                        summary.rejected.push(item.local_id);
                    }
                    tx.commit()?;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn flush_updates(&self, session: &mut Session, peershare_id: &str, summary: &mut FlushSummary) -> ClientResult<()> {
        let batch = store::items_in(session.store.conn(), SyncState::PendingUpdate)?;
        if batch.is_empty() {
            return Ok(());
        }
        let body = UpdateBody {
            updates: batch
                .iter()
                .map(|i| UpdateEntry {
                    object_id: i.object_id,
                    data: i.data.clone(),
                })
                .collect(),
        };
        let results = match self.call(session, Some(peershare_id.to_string()), RequestBody::Update(body))? {
            ResponseBody::Update(r) => r.results,
            other => return Err(unexpected(Method::Update, &other)),
        };
        let tx = session.store.transaction()?;
        for item in &batch {
            let status = results
                .iter()
                .find(|r| r.object_id == item.object_id)
                .map(|r| r.status)
                .ok_or_else(|| ClientError::Protocol(format!("no update result for {}", item.object_id)))?;
            match status {
                EntryStatus::Ok => {
                    store::set_sync(&tx, item.local_id, SyncState::Synced)?;
                    summary.updated += 1;
                }
                EntryStatus::NotFoundRemove => {
                    debug!(local_id = item.local_id, "server no longer has the item; purging");
                    store::delete_item(&tx, item.local_id)?;
                    summary.purged += 1;
                }
                EntryStatus::AuthError | EntryStatus::ValidationError => {
                    warn!(local_id = item.local_id, ?status, "server refused update");
                    store::set_sync(&tx, item.local_id, SyncState::Synced)?;
                    summary.rejected.push(item.local_id);
                }
            }
        }
        tx.commit()?;
        Ok(())
    }

    fn flush_deletes(&self, session: &mut Session, peershare_id: &str, summary: &mut FlushSummary) -> ClientResult<()> {
        let batch: Vec<LocalItem> = store::items_in(session.store.conn(), SyncState::PendingDelete)?
            .into_iter()
            .filter(|i| i.object_id != 0)
            .collect();
        if batch.is_empty() {
            return Ok(());
        }
        let object_ids = batch.iter().map(|i| i.object_id).collect();
        match self.call(
            session,
            Some(peershare_id.to_string()),
            RequestBody::Delete(DeleteBody { object_ids }),
        ) {
            Ok(ResponseBody::Delete(_)) => {}
            Ok(other) => return Err(unexpected(Method::Delete, &other)),
            // Ids the server reports as missing or foreign are not ours to
            // delete any more; the tombstones can go.
            Err(ClientError::Server(info)) if info.code == ErrorCode::PartialFailure => {
                debug!(message = %info.message, "some deletions were refused");
            }
            Err(e) => return Err(e),
        }
        let tx = session.store.transaction()?;
        for item in &batch {
            store::delete_item(&tx, item.local_id)?;
            summary.deleted += 1;
        }
        tx.commit()?;
        Ok(())
    }

    /// Flushes the queue, then replaces the downloaded set with the server's
    /// current answer.
    pub fn refresh(&self) -> ClientResult<RefreshSummary> {
        let mut guard = self.lock();
        let session = guard.as_mut().ok_or(ClientError::NotAuthenticated)?;
        let flushed = self.flush_session(session)?;
        let peershare_id = self.ensure_registered(session)?;
        let items: Vec<ItemView> = match self.call(session, Some(peershare_id), RequestBody::Download(EmptyBody {}))? {
            ResponseBody::Download(r) => r.items,
            other => return Err(unexpected(Method::Download, &other)),
        };
        let now = self.clock.now();
        let tx = session.store.transaction()?;
        // Synced items the server no longer lists were superseded or removed
        // elsewhere (e.g. replaced while an acknowledgement was lost).
        let listed: std::collections::BTreeSet<u64> = items
            .iter()
            .filter(|v| v.is_owner)
            .filter_map(|v| v.object_id)
            .collect();
        let mut purged = 0;
        for item in store::items_in(&tx, SyncState::Synced)? {
            if !listed.contains(&item.object_id) {
                store::delete_item(&tx, item.local_id)?;
                purged += 1;
            }
        }
        store::replace_remote(&tx, &items, now)?;
        store::set_meta(&tx, NEXT_REFRESH_AT, &(now + self.config.refresh_interval).to_string())?;
        tx.commit()?;
        Ok(RefreshSummary {
            flushed,
            fetched: items.len(),
            purged,
        })
    }

    /// When the next scheduled refresh is due; `None` means right away.
    pub fn next_refresh_at(&self) -> ClientResult<Option<i64>> {
        let guard = self.lock();
        let session = guard.as_ref().ok_or(ClientError::NotAuthenticated)?;
        let stored = store::get_meta(session.store.conn(), NEXT_REFRESH_AT)?;
        Ok(stored.and_then(|v| v.parse().ok()))
    }

    /// Timer entry point: refreshes when the schedule says so. A refresh
    /// missed while the agent was stopped runs on the first tick after start.
    /// Returns `None` when nothing was due or a refresh is already running.
    pub fn tick(&self) -> ClientResult<Option<RefreshSummary>> {
        let now = self.clock.now();
        let due = self.next_refresh_at()?.is_none_or(|at| now >= at);
        let (_, retry_at) = *self.retry.lock().unwrap();
        if !due || now < retry_at {
            return Ok(None);
        }
        if self.refreshing.swap(true, Ordering::SeqCst) {
            return Ok(None);
        }
        let result = self.refresh();
        self.refreshing.store(false, Ordering::SeqCst);
        let mut retry = self.retry.lock().unwrap();
        match result {
            Ok(summary) => {
                retry.0.reset();
                retry.1 = 0;
                Ok(Some(summary))
            }
            Err(e) => {
                if e.is_transient() {
                    let delay = retry.0.next_delay().as_secs() as i64;
                    retry.1 = now + delay;
                    warn!(error = %e, retry_in_secs = delay, "scheduled refresh failed");
                }
                Err(e)
            }
        }
    }
}

/// Background thread calling [`Agent::tick`] every `granularity`; stops on drop.
pub struct RefreshTimer {
    stop: Option<std::sync::mpsc::Sender<()>>,
    handle: Option<std::thread::JoinHandle<()>>,
}

impl RefreshTimer {
    pub fn spawn(agent: Arc<Agent>, granularity: std::time::Duration) -> Self {
        let (stop, stopped) = std::sync::mpsc::channel::<()>();
        let handle = std::thread::Builder::new()
            .name("refresh-timer".into())
            .spawn(move || loop {
                match agent.tick() {
                    Ok(Some(summary)) => debug!(fetched = summary.fetched, "scheduled refresh done"),
                    Ok(None) | Err(ClientError::NotAuthenticated) => {}
                    Err(e) => debug!(error = %e, "scheduled refresh failed"),
                }
                match stopped.recv_timeout(granularity) {
                    Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {}
                    _ => return,
                }
            })
            .expect("spawn refresh timer");
        Self {
            stop: Some(stop),
            handle: Some(handle),
        }
    }
}

impl Drop for RefreshTimer {
    fn drop(&mut self) {
        self.stop.take();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Checks applied before anything is stored locally.
fn check_local(session: &Session, data: &AppData) -> ClientResult<()> {
    validate_app_data(data).map_err(|e| ClientError::Validation(e.to_string()))?;
    if data.descriptor.binding_type == BindingType::OwnerAsserted && !data.owner.same_account(&session.identity) {
        return Err(ClientError::Validation(
            "owner-asserted item must be owned by the logged-in user".into(),
        ));
    }
    Ok(())
}

fn unexpected(method: Method, body: &ResponseBody) -> ClientError {
    ClientError::Protocol(format!("{method} answered with a {} result", body.method()))
}

fn new_op_key() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[cfg(test)]
mod tests;
