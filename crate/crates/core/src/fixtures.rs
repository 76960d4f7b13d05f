//! Built-in data types of the known PeerShare applications.
//!
//! | application  | data type            | sensitivity | specificity |
//! |--------------|----------------------|-------------|-------------|
//! | PeerSense    | BDADDR:social-ID     | private     | device      |
//! | SCAMPI       | SCAMPI-ID:social-ID  | private     | device      |
//! | FoF finder   | bearer token         | private     | user        |
//! | key exchange | public key           | public      | user        |

use crate::model::{AppData, AppIdentity, BindingType, DataDescriptor, Sensitivity, SocialIdentity, Specificity};

pub const BDADDR_BINDING: &str = "bdaddr-binding";
pub const SCAMPI_BINDING: &str = "scampi-id-binding";
pub const BEARER_TOKEN: &str = "bearer-token";
pub const PUBLIC_KEY: &str = "public-key";

/// Fixed creation time used by fixtures so encodings stay reproducible.
pub const FIXTURE_CREATED_AT: i64 = 1_373_846_400;

pub fn peersense_app() -> AppIdentity {
    AppIdentity::new("android", "org.peersense:5f3c2a")
}

pub fn scampi_app() -> AppIdentity {
    AppIdentity::new("android", "fi.scampi:91be07")
}

pub fn crowdshare_app() -> AppIdentity {
    AppIdentity::new("android", "fi.crowdshare:c0ffee")
}

#[allow(clippy::too_many_arguments)]
fn item(
    data_type: &str,
    value: &[u8],
    algorithm: &str,
    specificity: Specificity,
    sensitivity: Sensitivity,
    description: &str,
    owner: &SocialIdentity,
    creator: AppIdentity,
    device_id: &str,
) -> AppData {
    AppData {
        data_type: data_type.to_string(),
        data_value: value.to_vec(),
        descriptor: DataDescriptor {
            data_algorithm: algorithm.to_string(),
            specificity,
            sensitivity,
            binding_type: BindingType::OwnerAsserted,
            description: description.to_string(),
        },
        sharing_policy: None,
        created_at: FIXTURE_CREATED_AT,
        expires_at: 0,
        owner: owner.clone(),
        creator,
        device_id: device_id.to_string(),
    }
}

pub fn bdaddr_binding(owner: &SocialIdentity, device_id: &str, bdaddr: &[u8]) -> AppData {
    item(
        BDADDR_BINDING,
        bdaddr,
        "PLAIN",
        Specificity::Device,
        Sensitivity::Private,
        "Bluetooth address of the owner's device",
        owner,
        peersense_app(),
        device_id,
    )
}

pub fn scampi_binding(owner: &SocialIdentity, device_id: &str, scampi_id: &[u8]) -> AppData {
    item(
        SCAMPI_BINDING,
        scampi_id,
        "SHA-1",
        Specificity::Device,
        Sensitivity::Private,
        "SCAMPI identifier (public key hash) of the owner's device",
        owner,
        scampi_app(),
        device_id,
    )
}

pub fn bearer_token(owner: &SocialIdentity, token: &[u8]) -> AppData {
    item(
        BEARER_TOKEN,
        token,
        "PLAIN",
        Specificity::User,
        Sensitivity::Private,
        "friendship capability for friend-of-friend discovery",
        owner,
        crowdshare_app(),
        "",
    )
}

pub fn public_key(owner: &SocialIdentity, key: &[u8]) -> AppData {
    item(
        PUBLIC_KEY,
        key,
        "PLAIN",
        Specificity::User,
        Sensitivity::Public,
        "owner's public key",
        owner,
        crowdshare_app(),
        "",
    )
}

/// A blank item of a built-in data type, with the descriptor and creator
/// that type always uses. Owner, value and device are left empty.
pub fn builtin(data_type: &str) -> Option<AppData> {
    let anon = SocialIdentity::new("", "", "");
    match data_type {
        BDADDR_BINDING => Some(bdaddr_binding(&anon, "", &[])),
        SCAMPI_BINDING => Some(scampi_binding(&anon, "", &[])),
        BEARER_TOKEN => Some(bearer_token(&anon, &[])),
        PUBLIC_KEY => Some(public_key(&anon, &[])),
        _ => None,
    }
}
