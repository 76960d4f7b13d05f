//! Local IPC between applications and the agent: a Unix socket carrying
//! JSON messages, each prefixed by its length as a big-endian u32.
//!
//! The socket is created mode 0600, so only the agent's own OS user can
//! reach it. Applications name themselves in each request; when the agent is
//! configured with per-application secrets, a request that names an
//! application must also carry that application's secret.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::os::unix::net::{UnixListener, UnixStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::{debug, info, warn};

use peershare_core::client::{Agent, ClientError, TransportError};
use peershare_core::model::{AppData, AppIdentity, SharingPolicy, SocialIdentity};

pub const MAX_FRAME: u32 = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AgentRequest {
    Login {
        identity: SocialIdentity,
        token: String,
    },
    Logout,
    SetToken {
        token: String,
    },
    AddData {
        app: AppIdentity,
        data: AppData,
    },
    UpdateData {
        app: AppIdentity,
        local_id: u64,
        data: AppData,
    },
    RemoveData {
        app: AppIdentity,
        local_id: u64,
    },
    GetSharedDataDetail {
        app: AppIdentity,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        data_type: Option<String>,
    },
    GetMySocialData,
    GetAclPolicies,
    OverridePolicy {
        object_id: u64,
        sharing_policy: SharingPolicy,
    },
    Flush,
    Refresh,
    Status,
}

impl AgentRequest {
    /// The application a request acts for, if any.
    pub fn app(&self) -> Option<&AppIdentity> {
        match self {
            AgentRequest::AddData { app, .. }
            | AgentRequest::UpdateData { app, .. }
            | AgentRequest::RemoveData { app, .. }
            | AgentRequest::GetSharedDataDetail { app, .. } => Some(app),
            _ => None,
        }
    }
}

/// What travels in one frame from application to agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(flatten)]
    pub request: AgentRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_secret: Option<String>,
}

/// Per-application secrets keyed by `platform/app_id`. Empty means every
/// local caller is trusted to name itself.
#[derive(Debug, Clone, Default)]
pub struct AppAuth {
    secrets: HashMap<String, [u8; 32]>,
}

impl AppAuth {
    pub fn new<'a>(secrets: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Self {
            secrets: secrets
                .into_iter()
                .map(|(app, secret)| (app.to_string(), digest(secret)))
                .collect(),
        }
    }

    pub fn check(&self, envelope: &Envelope) -> Result<(), AgentReply> {
        let Some(app) = envelope.request.app() else {
            return Ok(());
        };
        if self.secrets.is_empty() {
            return Ok(());
        }
        let deny = |message: &str| AgentReply::Error {
            code: "APP_AUTH_FAILED".into(),
            message: format!("{app}: {message}"),
        };
        let expected = self
            .secrets
            .get(&app.to_string())
            .ok_or_else(|| deny("application not enrolled"))?;
        let given = envelope.app_secret.as_deref().ok_or_else(|| deny("missing secret"))?;
        // Equal-length digests; no early exit on the first differing byte.
        let diff = digest(given)
            .iter()
            .zip(expected)
            .fold(0u8, |acc, (a, b)| acc | (a ^ b));
        if diff == 0 {
            Ok(())
        } else {
            Err(deny("wrong secret"))
        }
    }
}

fn digest(secret: &str) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    Sha256::digest(secret.as_bytes()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AgentReply {
    Ok { result: Value },
    Error { code: String, message: String },
}

#[derive(Debug, thiserror::Error)]
pub enum IpcError {
    #[error("agent socket {path}: {source}")]
    Connect { path: String, source: io::Error },
    #[error("agent connection: {0}")]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Codec(#[from] serde_json::Error),
    #[error("message of {0} bytes exceeds the limit")]
    TooLarge(u32),
    #[error("{code}: {message}")]
    Agent { code: String, message: String },
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> Result<(), IpcError> {
    let len = u32::try_from(payload.len()).map_err(|_| IpcError::TooLarge(u32::MAX))?;
    if len > MAX_FRAME {
        return Err(IpcError::TooLarge(len));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

/// `Ok(None)` on a clean end of stream between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Vec<u8>>, IpcError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(IpcError::TooLarge(len));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn error_code(e: &ClientError) -> String {
    match e {
        ClientError::NotAuthenticated => "NOT_AUTHENTICATED".into(),
        ClientError::Validation(_) => "VALIDATION_ERROR".into(),
        ClientError::NotFound(_) => "NOT_FOUND".into(),
        ClientError::AclDenied(_) => "ACL_DENIED".into(),
        // A pin failure is an attack signal, not an outage.
        ClientError::Transport(TransportError::PinMismatch) => "PIN_MISMATCH".into(),
        ClientError::Transport(_) => "SERVER_UNREACHABLE".into(),
        ClientError::Server(info) => info.code.to_string(),
        ClientError::Protocol(_) => "PROTOCOL_ERROR".into(),
        ClientError::ProviderUnavailable(_) => "PROVIDER_UNAVAILABLE".into(),
        ClientError::Store(_) => "STORE_ERROR".into(),
    }
}

fn to_value<T: Serialize>(value: T) -> Result<Value, ClientError> {
    serde_json::to_value(value).map_err(|e| ClientError::Protocol(e.to_string()))
}

pub fn dispatch(agent: &Agent, request: AgentRequest) -> AgentReply {
    let result = match request {
        AgentRequest::Login { identity, token } => agent
            .login(identity, token)
            .and_then(|_| to_value(agent.get_my_social_data()?)),
        AgentRequest::Logout => {
            agent.logout();
            Ok(Value::Null)
        }
        AgentRequest::SetToken { token } => agent.set_token(token).map(|_| Value::Null),
        AgentRequest::AddData { app, data } => agent
            .add_data(&app, data)
            .map(|id| serde_json::json!({ "local_id": id })),
        AgentRequest::UpdateData { app, local_id, data } => {
            agent.update_data(&app, local_id, data).map(|_| Value::Null)
        }
        AgentRequest::RemoveData { app, local_id } => agent.remove_data(&app, local_id).map(|_| Value::Null),
        AgentRequest::GetSharedDataDetail { app, data_type } => agent
            .get_shared_data_detail(&app, data_type.as_deref())
            .and_then(to_value),
        AgentRequest::GetMySocialData => agent.get_my_social_data().and_then(to_value),
        AgentRequest::GetAclPolicies => agent.get_acl_policies().and_then(to_value),
        AgentRequest::OverridePolicy {
            object_id,
            sharing_policy,
        } => agent.override_policy(object_id, sharing_policy).map(|_| Value::Null),
        AgentRequest::Flush => agent.flush().and_then(to_value),
        AgentRequest::Refresh => agent.refresh().and_then(to_value),
        AgentRequest::Status => (|| {
            let items = agent.local_items()?;
            let pending = items.iter().filter(|i| i.sync.as_str().starts_with("PENDING")).count();
            Ok(serde_json::json!({
                "user": agent.get_my_social_data().ok(),
                "local_items": items.len(),
                "pending": pending,
                "remote_items": agent.remote_items()?.len(),
                "next_refresh_at": agent.next_refresh_at()?,
            }))
        })(),
    };
    match result {
        Ok(result) => AgentReply::Ok { result },
        Err(e) => AgentReply::Error {
            code: error_code(&e),
            message: e.to_string(),
        },
    }
}

fn serve_connection(agent: &Agent, auth: &AppAuth, mut stream: UnixStream) -> Result<(), IpcError> {
    while let Some(frame) = read_frame(&mut stream)? {
        let reply = match serde_json::from_slice::<Envelope>(&frame) {
            Ok(envelope) => match auth.check(&envelope) {
                Ok(()) => dispatch(agent, envelope.request),
                Err(denied) => denied,
            },
            Err(e) => AgentReply::Error {
                code: "BAD_REQUEST".into(),
                message: e.to_string(),
            },
        };
        write_frame(&mut stream, &serde_json::to_vec(&reply)?)?;
    }
    Ok(())
}

/// Listens on a Unix socket until dropped.
pub struct IpcServer {
    path: PathBuf,
    stop: Arc<AtomicBool>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl IpcServer {
    /// Binds `path`. A leftover socket file nobody listens on is replaced;
    /// a live one is an error.
    pub fn start(path: &Path, agent: Arc<Agent>, auth: AppAuth) -> io::Result<Self> {
        if path.exists() {
            if UnixStream::connect(path).is_ok() {
                return Err(io::Error::new(
                    io::ErrorKind::AddrInUse,
                    format!("{} is in use", path.display()),
                ));
            }
            std::fs::remove_file(path)?;
        }
        let listener = UnixListener::bind(path)?;
        restrict(path)?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let auth = Arc::new(auth);
        let thread = std::thread::Builder::new()
            .name("peershare-ipc".into())
            .spawn(move || {
                while !flag.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let (agent, auth) = (agent.clone(), auth.clone());
                            let _ = stream.set_nonblocking(false);
                            std::thread::spawn(move || {
                                if let Err(e) = serve_connection(&agent, &auth, stream) {
                                    debug!(error = %e, "ipc connection ended");
                                }
                            });
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(20))
                        }
                        Err(e) => {
                            warn!(error = %e, "ipc accept failed");
                            std::thread::sleep(Duration::from_millis(100));
                        }
                    }
                }
            })?;
        info!(path = %path.display(), "agent listening");
        Ok(Self {
            path: path.to_path_buf(),
            stop,
            thread: Some(thread),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for IpcServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
        let _ = std::fs::remove_file(&self.path);
    }
}

fn restrict(path: &Path) -> io::Result<()> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))
}

pub struct IpcClient {
    stream: UnixStream,
    app_secret: Option<String>,
}

impl IpcClient {
    pub fn connect(path: &Path) -> Result<Self, IpcError> {
        let stream = UnixStream::connect(path).map_err(|source| IpcError::Connect {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self {
            stream,
            app_secret: None,
        })
    }

    pub fn with_secret(mut self, secret: Option<String>) -> Self {
        self.app_secret = secret;
        self
    }

    pub fn call(&mut self, request: &AgentRequest) -> Result<Value, IpcError> {
        let envelope = Envelope {
            request: request.clone(),
            app_secret: self.app_secret.clone(),
        };
        write_frame(&mut self.stream, &serde_json::to_vec(&envelope)?)?;
        let frame = read_frame(&mut self.stream)?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "agent closed the connection"))?;
        match serde_json::from_slice(&frame)? {
            AgentReply::Ok { result } => Ok(result),
            AgentReply::Error { code, message } => Err(IpcError::Agent { code, message }),
        }
    }
}
