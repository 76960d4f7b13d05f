//! Social-network abstraction: token verification, the friend graph, custom
//! friend lists and change notification.
//!
//! [`MockProvider`] is a fully scriptable in-process implementation that stands
//! in for a real network; the `peershare-net` crate serves it over HTTP and
//! provides an HTTP-backed client implementing the same trait.

mod mock;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::SharingPolicy;

pub use mock::{GraphSnapshot, ListSnapshot, MockProvider};

/// A token as recorded by the issuing provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderToken {
    pub token: String,
    pub user_social_id: String,
    /// The social-network application the token was issued to.
    pub app_id: String,
    pub issued_at: i64,
    pub expires_at: i64,
    pub valid: bool,
}

/// What the provider vouches for when asked about a token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub user_social_id: String,
    pub app_id: String,
    pub valid: bool,
}

impl TokenClaims {
    pub fn invalid() -> Self {
        Self {
            user_social_id: String::new(),
            app_id: String::new(),
            valid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FriendListRef {
    pub list_id: String,
    pub display_name: String,
    pub owner_social_id: String,
}

/// Which audience of `owner_social_id` a change may have affected.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeTarget {
    AllFriends,
    List { list_id: String },
}

impl ChangeTarget {
    /// True if an item shared under `policy` may be affected by this change.
    pub fn covers(&self, policy: &SharingPolicy) -> bool {
        match (self, policy) {
            (ChangeTarget::AllFriends, SharingPolicy::AllFriends) => true,
            (ChangeTarget::List { list_id }, SharingPolicy::NamedList { list_ref }) => list_id == list_ref,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListChangeEvent {
    pub owner_social_id: String,
    pub target: ChangeTarget,
    /// Strictly increasing per provider instance, starting at 1.
    pub change_seq: u64,
}

/// Test-harness control surface for the mock graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GraphCommand {
    AddUser { user: String, name: String },
    AddFriendship { a: String, b: String },
    RemoveFriendship { a: String, b: String },
    CreateList { owner: String, name: String },
    DeleteList { list_id: String },
    AddToList { list_id: String, user: String },
    RemoveFromList { list_id: String, user: String },
    RevokeToken { token: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphAck {
    /// False when the command was a no-op.
    pub changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list_id: Option<String>,
    pub events: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown list {0:?}")]
    UnknownList(String),
    #[error("list {list:?} is not owned by {owner:?}")]
    ListNotOwned { list: String, owner: String },
    #[error("user {0:?} already exists")]
    DuplicateUser(String),
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("operation not supported by this provider: {0}")]
    Unsupported(&'static str),
}

impl ProviderError {
    /// Transient failures are retried; everything else is a definite answer.
    pub fn is_transient(&self) -> bool {
        matches!(self, ProviderError::Unreachable(_))
    }
}

pub type ChangeCallback = Box<dyn Fn(&ListChangeEvent) + Send + Sync>;

pub trait SocialProvider: Send + Sync {
    /// Network name used in [`crate::model::SocialIdentity::network`].
    fn network(&self) -> &str;

    /// Never fails for bad tokens; `Err` only when the provider cannot be reached.
    fn verify_token(&self, token: &str) -> Result<TokenClaims, ProviderError>;

    fn get_friends(&self, user_social_id: &str) -> Result<BTreeSet<String>, ProviderError>;

    fn get_custom_lists(&self, user_social_id: &str) -> Result<Vec<FriendListRef>, ProviderError>;

    fn list_members(&self, list_id: &str) -> Result<(FriendListRef, BTreeSet<String>), ProviderError>;

    /// Social ids eligible under `policy`; never contains the owner.
    fn expand_policy(&self, owner_social_id: &str, policy: &SharingPolicy) -> Result<BTreeSet<String>, ProviderError> {
        let mut ids = match policy {
            SharingPolicy::AllFriends => self.get_friends(owner_social_id)?,
            SharingPolicy::NamedList { list_ref } => {
                // Owner must exist even when the list lookup would fail first.
                self.get_friends(owner_social_id)?;
                let (list, members) = self.list_members(list_ref)?;
                if list.owner_social_id != owner_social_id {
                    return Err(ProviderError::ListNotOwned {
                        list: list_ref.clone(),
                        owner: owner_social_id.to_string(),
                    });
                }
                members
            }
        };
        ids.remove(owner_social_id);
        Ok(ids)
    }

    /// All events with `change_seq > after_seq`, in order.
    fn poll_changes(&self, after_seq: u64) -> Result<Vec<ListChangeEvent>, ProviderError>;

    /// Push delivery; providers without it return `Unsupported` and callers poll.
    fn subscribe(&self, _callback: ChangeCallback) -> Result<(), ProviderError> {
        Err(ProviderError::Unsupported("subscribe"))
    }
}
