//! The PeerShare server: request authentication, item storage, eligibility
//! materialization and reaction to social-graph changes.

mod changes;
pub mod store;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::RngCore;
use rusqlite::Connection;
use tracing::{debug, warn};

use crate::clock::Clock;
use crate::model::{
    is_live, redact_for_viewer, validate_app_data, AppData, BindingType, PolicySource, SharingPolicy, SocialIdentity,
    SocialKey, StoredItem,
};
use crate::protocol::{
    decode_request, encode_response, DeleteBody, DownloadResult, EmptyBody, EntryStatus, ErrorCode, ErrorInfo,
    ItemError, PolicyBody, RegisterBody, RegisterResult, Request, RequestBody, Response, ResponseBody, UpdateBody,
    UpdateResult, UpdateResults, UploadBody, UploadResult,
};
use crate::provider::{ProviderError, SocialProvider};

pub use changes::{Backoff, ChangeListener};
pub use store::{Store, StoreError};

/// A social network the server accepts, and the application id its tokens
/// must have been issued to.
#[derive(Clone)]
pub struct ProviderBinding {
    pub provider: Arc<dyn SocialProvider>,
    pub app_id: String,
}

pub struct Server {
    store: Mutex<Store>,
    providers: BTreeMap<String, ProviderBinding>,
    clock: Arc<dyn Clock>,
}

/// Internal failure that aborts a request.
#[derive(Debug)]
enum Fail {
    Respond(ErrorInfo),
    Store(StoreError),
}

impl From<StoreError> for Fail {
    fn from(e: StoreError) -> Self {
        Fail::Store(e)
    }
}

impl From<rusqlite::Error> for Fail {
    fn from(e: rusqlite::Error) -> Self {
        Fail::Store(StoreError::Sqlite(e))
    }
}

impl From<ErrorInfo> for Fail {
    fn from(e: ErrorInfo) -> Self {
        Fail::Respond(e)
    }
}

fn auth_error() -> Fail {
    Fail::Respond(ErrorInfo::auth())
}

fn unreachable(e: &ProviderError) -> Fail {
    Fail::Respond(ErrorInfo::new(ErrorCode::ServerError, e.to_string()))
}

type Outcome<T> = Result<T, Fail>;

impl Server {
    pub fn new(store: Store, clock: Arc<dyn Clock>) -> Self {
        Self {
            store: Mutex::new(store),
            providers: BTreeMap::new(),
            clock,
        }
    }

    pub fn with_provider(mut self, provider: Arc<dyn SocialProvider>, app_id: impl Into<String>) -> Self {
        let network = provider.network().to_string();
        self.providers.insert(
            network,
            ProviderBinding {
                provider,
                app_id: app_id.into(),
            },
        );
        self
    }

    pub fn providers(&self) -> impl Iterator<Item = (&str, &ProviderBinding)> {
        self.providers.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    fn lock(&self) -> MutexGuard<'_, Store> {
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn provider_for(&self, network: &str) -> Option<&ProviderBinding> {
        self.providers.get(network)
    }

    /// Decodes, handles and encodes one request. Requests whose token is
    /// missing or blank are refused as authentication failures before any
    /// schema check.
    pub fn handle_bytes(&self, bytes: &[u8]) -> Vec<u8> {
        let response = match serde_json::from_slice::<serde_json::Value>(bytes) {
            Err(e) => Response::error(ErrorCode::ValidationError, format!("malformed encoding: {e}")),
            Ok(value) => match value.get("token").and_then(|t| t.as_str()) {
                None | Some("") => Response::Error(ErrorInfo::auth()),
                Some(_) => match decode_request(bytes) {
                    Ok(request) => self.handle(request),
                    Err(e) => Response::error(ErrorCode::ValidationError, e.to_string()),
                },
            },
        };
        encode_response(&response)
    }

    pub fn handle(&self, request: Request) -> Response {
        let method = request.method();
        let result = self.dispatch(request);
        match result {
            Ok(body) => Response::Ok(body),
            Err(Fail::Respond(info)) => {
                debug!(%method, code = %info.code, "request refused");
                Response::Error(info)
            }
            Err(Fail::Store(e)) => {
                warn!(%method, error = %e, "storage failure");
                Response::error(ErrorCode::ServerError, "internal storage error")
            }
        }
    }

    fn dispatch(&self, request: Request) -> Outcome<ResponseBody> {
        if request.token.is_empty() {
            return Err(auth_error());
        }
        self.verify_token(&request.token, &request.identity)?;
        let Request {
            identity,
            peershare_id,
            body,
            ..
        } = request;
        if let RequestBody::Register(body) = body {
            return self.register(&identity, body);
        }
        let peershare_id = peershare_id.ok_or_else(auth_error)?;
        match body {
            RequestBody::Register(_) => unreachable!("handled above"),
            RequestBody::Upload(body) => self.upload(&identity, &peershare_id, body),
            RequestBody::Update(body) => self.update(&identity, &peershare_id, body),
            RequestBody::Download(_) => self.download(&identity, &peershare_id),
            RequestBody::Delete(body) => self.delete(&identity, &peershare_id, body),
            RequestBody::Unregister(_) => self.unregister(&identity, &peershare_id),
            RequestBody::Policy(body) => self.override_policy(&identity, &peershare_id, body),
        }
    }

    /// The token must be valid, issued to this server's application on the
    /// claimed network, and issued to the claimed user. Every failure is the
    /// same AUTH_ERROR.
    fn verify_token(&self, token: &str, claimed: &SocialIdentity) -> Outcome<()> {
        let binding = self.provider_for(&claimed.network).ok_or_else(auth_error)?;
        let claims = binding.provider.verify_token(token).map_err(|e| unreachable(&e))?;
        if claims.valid && claims.app_id == binding.app_id && claims.user_social_id == claimed.social_id {
            Ok(())
        } else {
            Err(auth_error())
        }
    }

    /// Resolves the caller's record and checks it is the one named in the request.
    fn caller(conn: &Connection, identity: &SocialIdentity, peershare_id: &str) -> Outcome<Vec<SocialIdentity>> {
        match store::find_user(conn, &identity.key())? {
            Some(found) if found == peershare_id => Ok(store::identities_of(conn, peershare_id)?),
            _ => Err(auth_error()),
        }
    }

    fn register(&self, identity: &SocialIdentity, body: RegisterBody) -> Outcome<ResponseBody> {
        if let Some(existing) = &body.existing_peershare_id {
            // Linking needs a second proof: a token for an identity that is
            // already on the target account.
            let (Some(proof_identity), Some(proof_token)) = (&body.existing_identity, &body.existing_token) else {
                return Err(auth_error());
            };
            self.verify_token(proof_token, proof_identity)?;
            let store = self.lock();
            if !store::user_exists(store.conn(), existing)? {
                return Err(ErrorInfo::new(ErrorCode::NotFound, "unknown existing_peershare_id").into());
            }
            if store::find_user(store.conn(), &proof_identity.key())?.as_deref() != Some(existing.as_str()) {
                return Err(auth_error());
            }
        }
        let mut store = self.lock();
        let tx = store.transaction()?;
        let peershare_id = if let Some(found) = store::find_user(&tx, &identity.key())? {
            found
        } else if let Some(existing) = body.existing_peershare_id {
            if !store::user_exists(&tx, &existing)? {
                return Err(ErrorInfo::new(ErrorCode::NotFound, "unknown existing_peershare_id").into());
            }
            store::link_identity(&tx, identity, &existing)?;
            existing
        } else {
            let fresh = new_peershare_id();
            store::insert_user(&tx, &fresh)?;
            store::link_identity(&tx, identity, &fresh)?;
            fresh
        };
        tx.commit()?;
        Ok(ResponseBody::Register(RegisterResult { peershare_id }))
    }

    fn expand(&self, owner: &SocialIdentity, policy: &SharingPolicy) -> Result<BTreeSet<SocialKey>, ProviderError> {
        let binding = self
            .provider_for(&owner.network)
            .ok_or_else(|| ProviderError::UnknownUser(owner.social_id.clone()))?;
        let ids = binding.provider.expand_policy(&owner.social_id, policy)?;
        Ok(ids
            .into_iter()
            .map(|social_id| SocialKey::new(owner.network.clone(), social_id))
            .collect())
    }

    /// Checks shared by UPLOAD items and UPDATE entries.
    fn check_item(data: &AppData, caller_ids: &[SocialIdentity]) -> Result<(), (ErrorCode, String)> {
        validate_app_data(data).map_err(|e| (ErrorCode::ValidationError, e.to_string()))?;
        if data.descriptor.binding_type != BindingType::OwnerAsserted {
            return Err((
                ErrorCode::ValidationError,
                "user-asserted bindings are never uploaded".into(),
            ));
        }
        if !caller_ids.iter().any(|id| id.same_account(&data.owner)) {
            return Err((ErrorCode::AuthError, "item owner is not the caller".into()));
        }
        Ok(())
    }

    fn upload(&self, identity: &SocialIdentity, peershare_id: &str, body: UploadBody) -> Outcome<ResponseBody> {
        let mut store = self.lock();
        let caller_ids = Self::caller(store.conn(), identity, peershare_id)?;

        // The batch is all-or-nothing: every item is processed inside one
        // transaction which is only committed when no item failed.
        let tx = store.transaction()?;
        let mut detail = Vec::new();
        let mut object_ids = Vec::with_capacity(body.items.len());
        let mut replaced = Vec::new();
        for (index, item) in body.items.into_iter().enumerate() {
            let mut data = item.data;
            let rejected = |code, message| ItemError {
                object_id: None,
                index: Some(index as u32),
                code,
                message,
            };
            if let Err((code, message)) = Self::check_item(&data, &caller_ids) {
                detail.push(rejected(code, message));
                continue;
            }
            let known = match &item.op_key {
                Some(key) => store::upload_key(&tx, peershare_id, key)?,
                None => None,
            };
            if let Some(object_id) = known {
                // Retry of an upload that was already applied.
                match store::get_item(&tx, object_id)? {
                    Some(existing) => match self.apply_app_data(&tx, &existing, data)? {
                        Ok(()) => {}
                        Err(e) if e.is_transient() => return Err(unreachable(&e)),
                        Err(e) => {
                            detail.push(rejected(ErrorCode::ValidationError, e.to_string()));
                            continue;
                        }
                    },
                    // Superseded since the first attempt; the sender should drop it.
                    None => replaced.push(object_id),
                }
                object_ids.push(object_id);
                continue;
            }
            let policy = data.sharing_policy.get_or_insert(SharingPolicy::AllFriends).clone();
            let eligible = match self.expand(&data.owner, &policy) {
                Ok(set) => set,
                Err(e) if e.is_transient() => return Err(unreachable(&e)),
                Err(e) => {
                    detail.push(rejected(ErrorCode::ValidationError, e.to_string()));
                    continue;
                }
            };
            for old in store::find_same_slot(&tx, &data)? {
                store::delete_item(&tx, old)?;
                replaced.push(old);
            }
            let object_id = store::allocate_object_id(&tx)?;
            store::insert_item(
                &tx,
                &StoredItem {
                    object_id,
                    owner_peershare_id: peershare_id.to_string(),
                    data,
                    policy_source: PolicySource::App,
                    eligible,
                },
            )?;
            if let Some(key) = &item.op_key {
                store::record_upload_key(&tx, peershare_id, key, object_id)?;
            }
            object_ids.push(object_id);
        }
        if !detail.is_empty() {
            let code = if detail.iter().any(|d| d.code == ErrorCode::AuthError) {
                ErrorCode::AuthError
            } else {
                ErrorCode::ValidationError
            };
            return Err(ErrorInfo {
                code,
                message: "upload rejected".into(),
                detail,
            }
            .into());
        }
        tx.commit()?;
        Ok(ResponseBody::Upload(UploadResult { object_ids, replaced }))
    }

    fn update(&self, identity: &SocialIdentity, peershare_id: &str, body: UpdateBody) -> Outcome<ResponseBody> {
        let mut store = self.lock();
        let caller_ids = Self::caller(store.conn(), identity, peershare_id)?;
        let now = self.clock.now();
        let tx = store.transaction()?;
        let mut results = Vec::with_capacity(body.updates.len());
        for entry in body.updates {
            let existing = store::get_item(&tx, entry.object_id)?.filter(|item| is_live(&item.data, now));
            let status = match existing {
                None => EntryStatus::NotFoundRemove,
                Some(existing) if existing.owner_peershare_id != peershare_id => EntryStatus::AuthError,
                Some(existing) => match Self::check_item(&entry.data, &caller_ids) {
                    Err((ErrorCode::AuthError, _)) => EntryStatus::AuthError,
                    Err(_) => EntryStatus::ValidationError,
                    Ok(()) if !same_slot(&existing.data, &entry.data) => EntryStatus::ValidationError,
                    Ok(()) => match self.apply_app_data(&tx, &existing, entry.data)? {
                        Ok(()) => EntryStatus::Ok,
                        Err(e) if e.is_transient() => return Err(unreachable(&e)),
                        Err(_) => EntryStatus::ValidationError,
                    },
                },
            };
            results.push(UpdateResult {
                object_id: entry.object_id,
                status,
            });
        }
        tx.commit()?;
        Ok(ResponseBody::Update(UpdateResults { results }))
    }

    /// Replaces the data fields of `existing` with `incoming` from the app.
    /// User overrides keep their policy; a changed policy is re-expanded.
    /// The outer error is storage, the inner one the provider's answer.
    fn apply_app_data(
        &self,
        conn: &Connection,
        existing: &StoredItem,
        mut incoming: AppData,
    ) -> Result<Result<(), ProviderError>, StoreError> {
        let policy = next_policy(existing, &incoming);
        let eligible = if policy != existing.effective_policy() {
            match self.expand(&incoming.owner, &policy) {
                Ok(set) => Some(set),
                Err(e) => return Ok(Err(e)),
            }
        } else {
            None
        };
        incoming.sharing_policy = Some(policy);
        store::update_item(conn, existing.object_id, &incoming, existing.policy_source)?;
        if let Some(eligible) = &eligible {
            store::set_eligible(conn, existing.object_id, eligible)?;
        }
        Ok(Ok(()))
    }

    fn download(&self, identity: &SocialIdentity, peershare_id: &str) -> Outcome<ResponseBody> {
        let store = self.lock();
        Self::caller(store.conn(), identity, peershare_id)?;
        let now = self.clock.now();
        let items = store::items_visible_to(store.conn(), peershare_id)?
            .iter()
            .filter(|item| is_live(&item.data, now))
            .map(|item| redact_for_viewer(item, peershare_id))
            .collect();
        Ok(ResponseBody::Download(DownloadResult { items }))
    }

    fn delete(&self, identity: &SocialIdentity, peershare_id: &str, body: DeleteBody) -> Outcome<ResponseBody> {
        let mut store = self.lock();
        Self::caller(store.conn(), identity, peershare_id)?;
        let now = self.clock.now();
        let tx = store.transaction()?;
        let mut detail = Vec::new();
        let mut seen = HashSet::new();
        for object_id in body.object_ids {
            if !seen.insert(object_id) {
                continue;
            }
            let code = match store::get_item(&tx, object_id)? {
                Some(item) if !is_live(&item.data, now) => Some(ErrorCode::NotFound),
                Some(item) if item.owner_peershare_id != peershare_id => Some(ErrorCode::AclDenied),
                Some(_) => {
                    store::delete_item(&tx, object_id)?;
                    None
                }
                None => Some(ErrorCode::NotFound),
            };
            if let Some(code) = code {
                detail.push(ItemError {
                    object_id: Some(object_id),
                    index: None,
                    code,
                    message: String::new(),
                });
            }
        }
        tx.commit()?;
        if detail.is_empty() {
            Ok(ResponseBody::Delete(EmptyBody {}))
        } else {
            let ids: Vec<String> = detail
                .iter()
                .filter_map(|d| d.object_id)
                .map(|id| id.to_string())
                .collect();
            Err(ErrorInfo {
                code: ErrorCode::PartialFailure,
                message: format!("not deleted: {}", ids.join(", ")),
                detail,
            }
            .into())
        }
    }

    fn unregister(&self, identity: &SocialIdentity, peershare_id: &str) -> Outcome<ResponseBody> {
        let mut store = self.lock();
        Self::caller(store.conn(), identity, peershare_id)?;
        let tx = store.transaction()?;
        let removed = store::delete_user(&tx, peershare_id)?;
        tx.commit()?;
        debug!(peershare_id, removed, "user unregistered");
        Ok(ResponseBody::Unregister(EmptyBody {}))
    }

    fn override_policy(
        &self,
        identity: &SocialIdentity,
        peershare_id: &str,
        body: PolicyBody,
    ) -> Outcome<ResponseBody> {
        let mut store = self.lock();
        Self::caller(store.conn(), identity, peershare_id)?;
        let now = self.clock.now();
        let item = store::get_item(store.conn(), body.object_id)?
            .filter(|item| is_live(&item.data, now))
            .ok_or_else(|| ErrorInfo::new(ErrorCode::NotFound, format!("no object {}", body.object_id)))?;
        if item.owner_peershare_id != peershare_id {
            return Err(ErrorInfo::new(ErrorCode::AclDenied, "caller does not own the object").into());
        }
        if let SharingPolicy::NamedList { list_ref } = &body.sharing_policy {
            if list_ref.is_empty() {
                return Err(ErrorInfo::new(ErrorCode::ValidationError, "empty list_ref").into());
            }
        }
        let eligible = match self.expand(&item.data.owner, &body.sharing_policy) {
            Ok(set) => set,
            Err(e) if e.is_transient() => return Err(unreachable(&e)),
            Err(e) => return Err(ErrorInfo::new(ErrorCode::ValidationError, e.to_string()).into()),
        };
        let mut data = item.data.clone();
        data.sharing_policy = Some(body.sharing_policy);
        let tx = store.transaction()?;
        store::update_item(&tx, item.object_id, &data, PolicySource::UserOverride)?;
        store::set_eligible(&tx, item.object_id, &eligible)?;
        tx.commit()?;
        Ok(ResponseBody::Policy(EmptyBody {}))
    }

    /// Removes expired items; returns how many were dropped. Downloads filter
    /// expired items regardless, so calling this only reclaims space.
    pub fn purge_expired(&self, now: i64) -> Result<usize, StoreError> {
        let mut store = self.lock();
        let tx = store.transaction()?;
        let expired = store::expired_items(&tx, now)?;
        for id in &expired {
            store::delete_item(&tx, *id)?;
        }
        tx.commit()?;
        Ok(expired.len())
    }

    /// SHA-256 of the complete persistent state.
    pub fn state_digest(&self) -> Result<[u8; 32], StoreError> {
        store::state_digest(self.lock().conn())
    }

    /// Every stored item, including expired ones not yet purged.
    pub fn all_items(&self) -> Result<Vec<StoredItem>, StoreError> {
        store::all_items(self.lock().conn())
    }

    pub fn identities_of(&self, peershare_id: &str) -> Result<Vec<SocialIdentity>, StoreError> {
        store::identities_of(self.lock().conn(), peershare_id)
    }
}

/// Policy an APP-originated update ends up with: user overrides win, and an
/// absent policy keeps the current one.
fn next_policy(existing: &StoredItem, incoming: &AppData) -> SharingPolicy {
    match existing.policy_source {
        PolicySource::UserOverride => existing.effective_policy(),
        PolicySource::App => incoming
            .sharing_policy
            .clone()
            .unwrap_or_else(|| existing.effective_policy()),
    }
}

fn same_slot(a: &AppData, b: &AppData) -> bool {
    a.owner.same_account(&b.owner)
        && a.data_type == b.data_type
        && a.descriptor.specificity == b.descriptor.specificity
        && a.device_id == b.device_id
}

fn new_peershare_id() -> String {
    let mut bytes = [0u8; 12];
    rand::rng().fill_bytes(&mut bytes);
    format!("ps-{}", hex::encode(bytes))
}

#[cfg(test)]
mod tests;
