//! Proptest generators for wire messages and stored items.

use std::collections::BTreeSet;

use proptest::prelude::*;

use peershare_core::model::{
    AppData, AppIdentity, BindingType, DataDescriptor, PolicySource, Sensitivity, SharingPolicy, SocialIdentity,
    SocialKey, Specificity, StoredItem,
};
use peershare_core::protocol::{
    DeleteBody, DownloadResult, EmptyBody, EntryStatus, ErrorCode, ErrorInfo, ItemError, Method, PolicyBody,
    RegisterBody, RegisterResult, Request, RequestBody, Response, ResponseBody, UpdateBody, UpdateEntry, UpdateResult,
    UpdateResults, UploadBody, UploadItem, UploadResult,
};

/// Printable text including quotes, backslashes and non-ASCII.
pub fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 _\\-\"\\\\é☃]{0,12}"
}

pub fn identity() -> impl Strategy<Value = SocialIdentity> {
    ("[a-z]{1,8}", "[a-z0-9.]{1,10}", text()).prop_map(|(n, s, name)| SocialIdentity::new(n, s, name))
}

pub fn app() -> impl Strategy<Value = AppIdentity> {
    ("[a-z]{1,8}", "[a-z.]{1,12}:[0-9a-f]{6}").prop_map(|(p, a)| AppIdentity::new(p, a))
}

pub fn policy() -> impl Strategy<Value = SharingPolicy> {
    prop_oneof![
        Just(SharingPolicy::AllFriends),
        "[a-z0-9\\-]{1,8}".prop_map(SharingPolicy::named),
    ]
}

/// Any structurally encodable item; not necessarily valid.
pub fn app_data() -> impl Strategy<Value = AppData> {
    (
        (text(), prop::collection::vec(any::<u8>(), 0..40), text()),
        (
            prop_oneof![Just(Specificity::Device), Just(Specificity::User)],
            prop_oneof![Just(Sensitivity::Public), Just(Sensitivity::Private)],
            prop_oneof![Just(BindingType::OwnerAsserted), Just(BindingType::UserAsserted)],
        ),
        (text(), prop::option::of(policy()), any::<i64>(), any::<i64>()),
        (identity(), app(), text()),
    )
        .prop_map(
            |(
                (data_type, data_value, data_algorithm),
                (specificity, sensitivity, binding_type),
                (description, sharing_policy, created_at, expires_at),
                (owner, creator, device_id),
            )| AppData {
                data_type,
                data_value,
                descriptor: DataDescriptor {
                    data_algorithm,
                    specificity,
                    sensitivity,
                    binding_type,
                    description,
                },
                sharing_policy,
                created_at,
                expires_at,
                owner,
                creator,
                device_id,
            },
        )
}

pub fn stored_item() -> impl Strategy<Value = StoredItem> {
    (
        1u64..1_000_000,
        "ps-[0-9a-f]{4}",
        app_data(),
        prop_oneof![Just(PolicySource::App), Just(PolicySource::UserOverride)],
        prop::collection::btree_set(
            ("[a-z]{1,4}", "[a-z]{1,4}").prop_map(|(n, s)| SocialKey::new(n, s)),
            0..4,
        ),
    )
        .prop_map(|(object_id, owner_peershare_id, mut data, policy_source, eligible)| {
            data.sharing_policy.get_or_insert(SharingPolicy::AllFriends);
            StoredItem {
                object_id,
                owner_peershare_id,
                data,
                policy_source,
                eligible: eligible.into_iter().collect::<BTreeSet<_>>(),
            }
        })
}

pub fn request_body() -> impl Strategy<Value = RequestBody> {
    let items = prop::collection::vec(
        (prop::option::of("[0-9a-f]{32}"), app_data()).prop_map(|(op_key, data)| UploadItem { op_key, data }),
        0..3,
    );
    let updates = prop::collection::vec(
        (any::<u64>(), app_data()).prop_map(|(object_id, data)| UpdateEntry { object_id, data }),
        0..3,
    );
    prop_oneof![
        (
            prop::option::of("ps-[0-9a-f]{6}"),
            prop::option::of(identity()),
            prop::option::of(text())
        )
            .prop_map(
                |(existing_peershare_id, existing_identity, existing_token)| RequestBody::Register(RegisterBody {
                    existing_peershare_id,
                    existing_identity,
                    existing_token,
                })
            ),
        items.prop_map(|items| RequestBody::Upload(UploadBody { items })),
        updates.prop_map(|updates| RequestBody::Update(UpdateBody { updates })),
        Just(RequestBody::Download(EmptyBody {})),
        prop::collection::vec(any::<u64>(), 0..5).prop_map(|object_ids| RequestBody::Delete(DeleteBody { object_ids })),
        Just(RequestBody::Unregister(EmptyBody {})),
        (any::<u64>(), policy()).prop_map(|(object_id, sharing_policy)| RequestBody::Policy(PolicyBody {
            object_id,
            sharing_policy
        })),
    ]
}

pub fn request() -> impl Strategy<Value = Request> {
    ("[A-Za-z0-9_\\-]{1,43}", identity(), "ps-[0-9a-f]{6}", request_body()).prop_map(|(token, identity, id, body)| {
        let peershare_id = (body.method() != Method::Register).then_some(id);
        Request {
            token,
            identity,
            peershare_id,
            body,
        }
    })
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::AuthError,
        ErrorCode::ValidationError,
        ErrorCode::NotFound,
        ErrorCode::NotFoundRemove,
        ErrorCode::AclDenied,
        ErrorCode::PartialFailure,
        ErrorCode::ServerError,
    ])
}

fn error_info() -> impl Strategy<Value = ErrorInfo> {
    let detail = (
        prop::option::of(any::<u64>()),
        prop::option::of(any::<u32>()),
        error_code(),
        text(),
    )
        .prop_map(|(object_id, index, code, message)| ItemError {
            object_id,
            index,
            code,
            message,
        });
    (error_code(), text(), prop::collection::vec(detail, 0..3)).prop_map(|(code, message, detail)| ErrorInfo {
        code,
        message,
        detail,
    })
}

fn item_view() -> impl Strategy<Value = peershare_core::model::ItemView> {
    (stored_item(), any::<bool>()).prop_map(|(item, owner)| {
        let viewer = if owner {
            item.owner_peershare_id.clone()
        } else {
            "ps-viewer".to_string()
        };
        peershare_core::model::redact_for_viewer(&item, &viewer)
    })
}

pub fn response_body(method: Method) -> BoxedStrategy<ResponseBody> {
    match method {
        Method::Register => "ps-[0-9a-f]{6}"
            .prop_map(|peershare_id| ResponseBody::Register(RegisterResult { peershare_id }))
            .boxed(),
        Method::Upload => (
            prop::collection::vec(any::<u64>(), 0..4),
            prop::collection::vec(any::<u64>(), 0..2),
        )
            .prop_map(|(object_ids, replaced)| ResponseBody::Upload(UploadResult { object_ids, replaced }))
            .boxed(),
        Method::Update => prop::collection::vec(
            (
                any::<u64>(),
                prop::sample::select(vec![
                    EntryStatus::Ok,
                    EntryStatus::NotFoundRemove,
                    EntryStatus::AuthError,
                    EntryStatus::ValidationError,
                ]),
            )
                .prop_map(|(object_id, status)| UpdateResult { object_id, status }),
            0..4,
        )
        .prop_map(|results| ResponseBody::Update(UpdateResults { results }))
        .boxed(),
        Method::Download => prop::collection::vec(item_view(), 0..4)
            .prop_map(|items| ResponseBody::Download(DownloadResult { items }))
            .boxed(),
        Method::Delete => Just(ResponseBody::Delete(EmptyBody {})).boxed(),
        Method::Unregister => Just(ResponseBody::Unregister(EmptyBody {})).boxed(),
        Method::Policy => Just(ResponseBody::Policy(EmptyBody {})).boxed(),
    }
}

/// A method together with a response for it.
pub fn response() -> impl Strategy<Value = (Method, Response)> {
    prop::sample::select(Method::ALL.to_vec()).prop_flat_map(|method| {
        prop_oneof![
            response_body(method).prop_map(Response::Ok),
            error_info().prop_map(Response::Error),
        ]
        .prop_map(move |r| (method, r))
    })
}
