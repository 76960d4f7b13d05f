//! Wire messages exchanged between the client service and the server.
//!
//! Every message is a single compact JSON document with the envelope
//! `{"v":1,"method":...,"token":...,"identity":{...},"peershare_id":...,"body":{...}}`
//! for requests and `{"v":1,"status":"ok","result":{...}}` or
//! `{"v":1,"status":"error","error":{...}}` for responses. Unknown fields are
//! ignored on decode; missing required fields are reported by name.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{AppData, ItemView, SharingPolicy, SocialIdentity};

pub const PROTOCOL_VERSION: u32 = 1;
pub const CONTENT_TYPE: &str = "application/json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Register,
    Upload,
    Update,
    Download,
    Delete,
    Unregister,
    Policy,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Register,
        Method::Upload,
        Method::Update,
        Method::Download,
        Method::Delete,
        Method::Unregister,
        Method::Policy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Register => "register",
            Method::Upload => "upload",
            Method::Update => "update",
            Method::Download => "download",
            Method::Delete => "delete",
            Method::Unregister => "unregister",
            Method::Policy => "policy",
        }
    }

    /// HTTP path the method is posted to.
    pub fn path(self) -> &'static str {
        match self {
            Method::Register => "/register",
            Method::Upload => "/upload",
            Method::Update => "/update",
            Method::Download => "/download",
            Method::Delete => "/delete",
            Method::Unregister => "/unregister",
            Method::Policy => "/policy",
        }
    }

    pub fn from_path(path: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.path() == path)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterBody {
    /// Links the claimed identity to an existing account instead of minting
    /// a new one. Requires proof of an identity already on that account.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_peershare_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_identity: Option<SocialIdentity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub existing_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadItem {
    /// Client-generated idempotency key; a retried upload with the same key
    /// resolves to the object created by the first attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op_key: Option<String>,
    pub data: AppData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadBody {
    pub items: Vec<UploadItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateEntry {
    pub object_id: u64,
    pub data: AppData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateBody {
    pub updates: Vec<UpdateEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyBody {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeleteBody {
    pub object_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyBody {
    pub object_id: u64,
    pub sharing_policy: SharingPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum RequestBody {
    Register(RegisterBody),
    Upload(UploadBody),
    Update(UpdateBody),
    Download(EmptyBody),
    Delete(DeleteBody),
    Unregister(EmptyBody),
    Policy(PolicyBody),
}

impl RequestBody {
    pub fn method(&self) -> Method {
        match self {
            RequestBody::Register(_) => Method::Register,
            RequestBody::Upload(_) => Method::Upload,
            RequestBody::Update(_) => Method::Update,
            RequestBody::Download(_) => Method::Download,
            RequestBody::Delete(_) => Method::Delete,
            RequestBody::Unregister(_) => Method::Unregister,
            RequestBody::Policy(_) => Method::Policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub token: String,
    /// The social identity the sender claims; checked against the token.
    pub identity: SocialIdentity,
    /// Required on every method except REGISTER.
    pub peershare_id: Option<String>,
    pub body: RequestBody,
}

impl Request {
    pub fn method(&self) -> Method {
        self.body.method()
    }
}

#[derive(Serialize)]
struct RequestOut<'a> {
    v: u32,
    method: Method,
    token: &'a str,
    identity: &'a SocialIdentity,
    #[serde(skip_serializing_if = "Option::is_none")]
    peershare_id: Option<&'a str>,
    body: &'a RequestBody,
}

#[derive(Deserialize)]
struct RequestIn {
    v: u32,
    method: Method,
    token: String,
    identity: SocialIdentity,
    #[serde(default)]
    peershare_id: Option<String>,
    body: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    AuthError,
    ValidationError,
    NotFound,
    NotFoundRemove,
    AclDenied,
    PartialFailure,
    ServerError,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            ErrorCode::AuthError => "AUTH_ERROR",
            ErrorCode::ValidationError => "VALIDATION_ERROR",
            ErrorCode::NotFound => "NOT_FOUND",
            ErrorCode::NotFoundRemove => "NOT_FOUND_REMOVE",
            ErrorCode::AclDenied => "ACL_DENIED",
            ErrorCode::PartialFailure => "PARTIAL_FAILURE",
            ErrorCode::ServerError => "SERVER_ERROR",
        };
        f.write_str(text)
    }
}

/// Per-item failure inside an error response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u32>,
    pub code: ErrorCode,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detail: Vec<ItemError>,
}

impl ErrorInfo {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: Vec::new(),
        }
    }

    pub fn auth() -> Self {
        ErrorInfo::new(ErrorCode::AuthError, "authentication failed")
    }
}

impl fmt::Display for ErrorInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

/// Outcome of one UPDATE entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryStatus {
    Ok,
    /// The object does not exist (any more); the client must drop its copy.
    NotFoundRemove,
    AuthError,
    ValidationError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateResult {
    pub object_id: u64,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterResult {
    pub peershare_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadResult {
    /// Positionally matched with the request's items.
    pub object_ids: Vec<u64>,
    /// Objects that no longer exist after this upload because a later item
    /// took their slot. May repeat ids from `object_ids`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replaced: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateResults {
    pub results: Vec<UpdateResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadResult {
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum ResponseBody {
    Register(RegisterResult),
    Upload(UploadResult),
    Update(UpdateResults),
    Download(DownloadResult),
    Delete(EmptyBody),
    Unregister(EmptyBody),
    Policy(EmptyBody),
}

impl ResponseBody {
    pub fn method(&self) -> Method {
        match self {
            ResponseBody::Register(_) => Method::Register,
            ResponseBody::Upload(_) => Method::Upload,
            ResponseBody::Update(_) => Method::Update,
            ResponseBody::Download(_) => Method::Download,
            ResponseBody::Delete(_) => Method::Delete,
            ResponseBody::Unregister(_) => Method::Unregister,
            ResponseBody::Policy(_) => Method::Policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok(ResponseBody),
    Error(ErrorInfo),
}

impl Response {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        Response::Error(ErrorInfo::new(code, message))
    }

    pub fn error_code(&self) -> Option<ErrorCode> {
        match self {
            Response::Ok(_) => None,
            Response::Error(e) => Some(e.code),
        }
    }

    pub fn into_result(self) -> Result<ResponseBody, ErrorInfo> {
        match self {
            Response::Ok(body) => Ok(body),
            Response::Error(e) => Err(e),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Status {
    Ok,
    Error,
}

#[derive(Serialize)]
struct ResponseOut<'a> {
    v: u32,
    status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a ResponseBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a ErrorInfo>,
}

#[derive(Deserialize)]
struct ResponseIn {
    v: u32,
    status: Status,
    #[serde(default)]
    result: Option<serde_json::Value>,
    #[serde(default)]
    error: Option<ErrorInfo>,
}

#[derive(Debug, thiserror::Error)]
pub enum CodecError {
    #[error("malformed encoding: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("schema violation: {0}")]
    Schema(String),
}

pub fn encode_request(request: &Request) -> Vec<u8> {
    let out = RequestOut {
        v: PROTOCOL_VERSION,
        method: request.method(),
        token: &request.token,
        identity: &request.identity,
        peershare_id: request.peershare_id.as_deref(),
        body: &request.body,
    };
    serde_json::to_vec(&out).expect("request serialization is infallible")
}

fn check_version(v: u32) -> Result<(), CodecError> {
    if v == PROTOCOL_VERSION {
        Ok(())
    } else {
        Err(CodecError::Schema(format!("unsupported protocol version {v}")))
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<Request, CodecError> {
    let wire: RequestIn = serde_json::from_slice(bytes)?;
    check_version(wire.v)?;
    if wire.method != Method::Register && wire.peershare_id.is_none() {
        return Err(CodecError::Schema("missing field `peershare_id`".into()));
    }
    let body = match wire.method {
        Method::Register => RequestBody::Register(serde_json::from_value(wire.body)?),
        Method::Upload => RequestBody::Upload(serde_json::from_value(wire.body)?),
        Method::Update => RequestBody::Update(serde_json::from_value(wire.body)?),
        Method::Download => RequestBody::Download(serde_json::from_value(wire.body)?),
        Method::Delete => RequestBody::Delete(serde_json::from_value(wire.body)?),
        Method::Unregister => RequestBody::Unregister(serde_json::from_value(wire.body)?),
        Method::Policy => RequestBody::Policy(serde_json::from_value(wire.body)?),
    };
    Ok(Request {
        token: wire.token,
        identity: wire.identity,
        peershare_id: wire.peershare_id,
        body,
    })
}

pub fn encode_response(response: &Response) -> Vec<u8> {
    let out = match response {
        Response::Ok(body) => ResponseOut {
            v: PROTOCOL_VERSION,
            status: Status::Ok,
            result: Some(body),
            error: None,
        },
        Response::Error(info) => ResponseOut {
            v: PROTOCOL_VERSION,
            status: Status::Error,
            result: None,
            error: Some(info),
        },
    };
    serde_json::to_vec(&out).expect("response serialization is infallible")
}

/// Decodes a response; the method is needed to pick the result schema.
pub fn decode_response(method: Method, bytes: &[u8]) -> Result<Response, CodecError> {
    let wire: ResponseIn = serde_json::from_slice(bytes)?;
    check_version(wire.v)?;
    match wire.status {
        Status::Error => wire
            .error
            .map(Response::Error)
            .ok_or_else(|| CodecError::Schema("missing field `error`".into())),
        Status::Ok => {
            let result = wire
                .result
                .ok_or_else(|| CodecError::Schema("missing field `result`".into()))?;
            let body = match method {
                Method::Register => ResponseBody::Register(serde_json::from_value(result)?),
                Method::Upload => ResponseBody::Upload(serde_json::from_value(result)?),
                Method::Update => ResponseBody::Update(serde_json::from_value(result)?),
                Method::Download => ResponseBody::Download(serde_json::from_value(result)?),
                Method::Delete => ResponseBody::Delete(serde_json::from_value(result)?),
                Method::Unregister => ResponseBody::Unregister(serde_json::from_value(result)?),
                Method::Policy => ResponseBody::Policy(serde_json::from_value(result)?),
            };
            Ok(Response::Ok(body))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn alice() -> SocialIdentity {
        SocialIdentity::new("mocknet", "alice", "Alice")
    }

    fn upload_request() -> Request {
        Request {
            token: "tok".into(),
            identity: alice(),
            peershare_id: Some("ps-1".into()),
            body: RequestBody::Upload(UploadBody {
                items: vec![UploadItem {
                    op_key: Some("k1".into()),
                    data: fixtures::bdaddr_binding(&alice(), "dev1", b"00:1A"),
                }],
            }),
        }
    }

    #[test]
    fn upload_round_trip() {
        let req = upload_request();
        assert_eq!(decode_request(&encode_request(&req)).unwrap(), req);
    }

    #[test]
    fn absent_policy_decodes_as_absent() {
        let bytes = encode_request(&upload_request());
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains("sharing_policy"));
        let RequestBody::Upload(body) = decode_request(text.as_bytes()).unwrap().body else {
            panic!("not an upload");
        };
        assert_eq!(body.items[0].data.sharing_policy, None);
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let mut value: serde_json::Value = serde_json::from_slice(&encode_request(&upload_request())).unwrap();
        value["future"] = serde_json::json!({"x": 1});
        value["body"]["items"][0]["data"]["colour"] = serde_json::json!("blue");
        let decoded = decode_request(&serde_json::to_vec(&value).unwrap()).unwrap();
        assert_eq!(decoded, upload_request());
    }

    #[test]
    fn missing_field_is_named() {
        let mut value: serde_json::Value = serde_json::from_slice(&encode_request(&upload_request())).unwrap();
        value["body"]["items"][0]["data"]
            .as_object_mut()
            .unwrap()
            .remove("data_type");
        let err = decode_request(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        assert!(err.to_string().contains("data_type"), "{err}");

        value.as_object_mut().unwrap().remove("peershare_id");
        let err = decode_request(&serde_json::to_vec(&value).unwrap()).unwrap_err();
        assert!(err.to_string().contains("peershare_id"), "{err}");
    }

    #[test]
    fn register_needs_no_peershare_id() {
        let req = Request {
            token: "tok".into(),
            identity: alice(),
            peershare_id: None,
            body: RequestBody::Register(RegisterBody::default()),
        };
        assert_eq!(decode_request(&encode_request(&req)).unwrap(), req);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = String::from_utf8(encode_request(&upload_request()))
            .unwrap()
            .replace("\"v\":1", "\"v\":2");
        assert!(matches!(decode_request(text.as_bytes()), Err(CodecError::Schema(_))));
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(decode_request(b"{not json"), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn error_response_round_trip() {
        let resp = Response::Error(ErrorInfo {
            code: ErrorCode::PartialFailure,
            message: "some objects were not deleted".into(),
            detail: vec![ItemError {
                object_id: Some(9),
                index: None,
                code: ErrorCode::NotFound,
                message: String::new(),
            }],
        });
        let bytes = encode_response(&resp);
        assert_eq!(decode_response(Method::Delete, &bytes).unwrap(), resp);
    }

    #[test]
    fn paths_map_back_to_methods() {
        for m in Method::ALL {
            assert_eq!(Method::from_path(m.path()), Some(m));
        }
        assert_eq!(Method::from_path("/ui"), None);
    }
}
