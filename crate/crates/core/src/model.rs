//! Domain types shared by the server, the client service and the wire protocol.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A person's account inside one social network.
///
/// `(network, social_id)` is the identity key; `social_name` is display-only
/// and ignored by [`SocialIdentity::key`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SocialIdentity {
    pub network: String,
    pub social_id: String,
    pub social_name: String,
}

impl SocialIdentity {
    pub fn new(network: impl Into<String>, social_id: impl Into<String>, social_name: impl Into<String>) -> Self {
        Self {
            network: network.into(),
            social_id: social_id.into(),
            social_name: social_name.into(),
        }
    }

    pub fn key(&self) -> SocialKey {
        SocialKey {
            network: self.network.clone(),
            social_id: self.social_id.clone(),
        }
    }

    /// True when both identities name the same account, regardless of display name.
    pub fn same_account(&self, other: &SocialIdentity) -> bool {
        self.network == other.network && self.social_id == other.social_id
    }
}

/// The identity key of a [`SocialIdentity`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SocialKey {
    pub network: String,
    pub social_id: String,
}

impl SocialKey {
    pub fn new(network: impl Into<String>, social_id: impl Into<String>) -> Self {
        Self {
            network: network.into(),
            social_id: social_id.into(),
        }
    }
}

/// The application that created an item, as identified by the platform.
///
/// Equality is exact string equality on both fields. The canonical storage
/// form is `platform/app_id`, e.g. `android/org.peersense:3f9a1c`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AppIdentity {
    pub platform: String,
    pub app_id: String,
}

impl AppIdentity {
    pub fn new(platform: impl Into<String>, app_id: impl Into<String>) -> Self {
        Self {
            platform: platform.into(),
            app_id: app_id.into(),
        }
    }
}

impl fmt::Display for AppIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.platform, self.app_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("app identity must look like `platform/app_id`, got {0:?}")]
pub struct ParseAppIdentityError(String);

impl FromStr for AppIdentity {
    type Err = ParseAppIdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((platform, app_id)) if !platform.is_empty() && !app_id.is_empty() => {
                Ok(AppIdentity::new(platform, app_id))
            }
            _ => Err(ParseAppIdentityError(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Specificity {
    Device,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    Public,
    Private,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BindingType {
    /// Uploaded by the identified user's own device; distributed.
    #[serde(rename = "owner")]
    OwnerAsserted,
    /// Claimed by the local user about someone else; never leaves the device.
    #[serde(rename = "user_asserted")]
    UserAsserted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDescriptor {
    /// Label of the processing chain, e.g. `PLAIN` or `SHA-1`. Never interpreted.
    pub data_algorithm: String,
    pub specificity: Specificity,
    pub sensitivity: Sensitivity,
    pub binding_type: BindingType,
    pub description: String,
}

/// Audience of an item on the owner's social network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SharingPolicy {
    AllFriends,
    #[serde(rename = "list")]
    NamedList {
        list_ref: String,
    },
}

impl SharingPolicy {
    pub fn named(list_ref: impl Into<String>) -> Self {
        SharingPolicy::NamedList {
            list_ref: list_ref.into(),
        }
    }
}

impl fmt::Display for SharingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SharingPolicy::AllFriends => f.write_str("all_friends"),
            SharingPolicy::NamedList { list_ref } => write!(f, "list:{list_ref}"),
        }
    }
}

/// A distributable item as supplied by an application.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppData {
    pub data_type: String,
    #[serde(with = "crate::b64")]
    pub data_value: Vec<u8>,
    #[serde(flatten)]
    pub descriptor: DataDescriptor,
    /// Absent on upload means "all friends".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharing_policy: Option<SharingPolicy>,
    pub created_at: i64,
    /// 0 means the item never expires.
    pub expires_at: i64,
    pub owner: SocialIdentity,
    pub creator: AppIdentity,
    #[serde(default)]
    pub device_id: String,
}

/// Where the effective sharing policy of a stored item came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    App,
    UserOverride,
}

impl PolicySource {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicySource::App => "app",
            PolicySource::UserOverride => "user_override",
        }
    }
}

/// Server-side record of an uploaded item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredItem {
    pub object_id: u64,
    pub owner_peershare_id: String,
    /// `data.sharing_policy` is always `Some` once stored.
    pub data: AppData,
    pub policy_source: PolicySource,
    pub eligible: BTreeSet<SocialKey>,
}

impl StoredItem {
    pub fn effective_policy(&self) -> SharingPolicy {
        self.data.sharing_policy.clone().unwrap_or(SharingPolicy::AllFriends)
    }
}

/// What a viewer receives for one item on DOWNLOAD.
///
/// Only the owner's view carries `object_id`, `sharing_policy` and
/// `policy_source`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemView {
    #[serde(flatten)]
    pub data: AppData,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u64>,
    pub is_owner: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_source: Option<PolicySource>,
}

impl ItemView {
    /// Drops every owner-only field.
    pub fn strip_private(mut self) -> ItemView {
        self.data.sharing_policy = None;
        self.object_id = None;
        self.policy_source = None;
        self.is_owner = false;
        self
    }
}

pub fn redact_for_viewer(item: &StoredItem, viewer_peershare_id: &str) -> ItemView {
    let mut data = item.data.clone();
    if item.owner_peershare_id == viewer_peershare_id {
        data.sharing_policy = Some(item.effective_policy());
        ItemView {
            data,
            object_id: Some(item.object_id),
            is_owner: true,
            policy_source: Some(item.policy_source),
        }
    } else {
        ItemView {
            data,
            object_id: None,
            is_owner: false,
            policy_source: None,
        }
        .strip_private()
    }
}

/// Expiry is exclusive: an item with `expires_at == now` is already dead.
pub fn is_live(item: &AppData, now: i64) -> bool {
    item.expires_at == 0 || now < item.expires_at
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Violation {
    #[error("empty data_type")]
    EmptyDataType,
    #[error("empty data_value")]
    EmptyDataValue,
    #[error("device_id on user-specific item")]
    DeviceIdOnUserItem,
    #[error("missing device_id on device-specific item")]
    MissingDeviceId,
    #[error("expiry before creation")]
    ExpiryBeforeCreation,
    #[error("empty owner network")]
    EmptyOwnerNetwork,
    #[error("empty owner social_id")]
    EmptyOwnerSocialId,
    #[error("empty list_ref on named-list policy")]
    EmptyListRef,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid item: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
pub struct ValidationErrors(pub Vec<Violation>);

/// Checks every field constraint of an item, reporting all violations at once.
pub fn validate_app_data(item: &AppData) -> Result<(), ValidationErrors> {
    let mut violations = Vec::new();
    if item.data_type.is_empty() {
        violations.push(Violation::EmptyDataType);
    }
    if item.data_value.is_empty() {
        violations.push(Violation::EmptyDataValue);
    }
    match item.descriptor.specificity {
        Specificity::User if !item.device_id.is_empty() => violations.push(Violation::DeviceIdOnUserItem),
        Specificity::Device if item.device_id.is_empty() => violations.push(Violation::MissingDeviceId),
        _ => {}
    }
    if item.expires_at != 0 && item.expires_at < item.created_at {
        violations.push(Violation::ExpiryBeforeCreation);
    }
    if item.owner.network.is_empty() {
        violations.push(Violation::EmptyOwnerNetwork);
    }
    if item.owner.social_id.is_empty() {
        violations.push(Violation::EmptyOwnerSocialId);
    }
    if let Some(SharingPolicy::NamedList { list_ref }) = &item.sharing_policy {
        if list_ref.is_empty() {
            violations.push(Violation::EmptyListRef);
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(ValidationErrors(violations))
    }
}
