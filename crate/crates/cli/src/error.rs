//! Failures and the process exit codes they map to.

use peershare_core::client::{ClientError, TransportError};
use peershare_core::protocol::ErrorCode;
use peershare_net::ipc::IpcError;

/// Exit codes. 2 is left to argument parsing errors.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const CONFIG: i32 = 3;
    pub const AUTH: i32 = 4;
    pub const VALIDATION: i32 = 5;
    pub const NOT_FOUND: i32 = 6;
    pub const ACL_DENIED: i32 = 7;
    pub const UNREACHABLE: i32 = 8;
    pub const PIN_MISMATCH: i32 = 9;
    pub const PROVIDER: i32 = 10;
    pub const STORE: i32 = 11;
    pub const PROTOCOL: i32 = 12;
    pub const EXPECTATION: i32 = 13;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    /// An error reported with its stable code string.
    #[error("{code}: {message}")]
    Coded { code: String, message: String, exit: i32 },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn coded(code: &str, message: impl Into<String>) -> Self {
        CliError::Coded {
            code: code.into(),
            message: message.into(),
            exit: exit_for_code(code),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Usage(_) => exit::USAGE,
            CliError::Coded { exit, .. } => *exit,
            CliError::Io(_) | CliError::Failed(_) => exit::INTERNAL,
        }
    }

    pub fn code(&self) -> String {
        match self {
            CliError::Config(_) => "CONFIG_ERROR".into(),
            CliError::Usage(_) => "USAGE".into(),
            CliError::Coded { code, .. } => code.clone(),
            CliError::Io(_) | CliError::Failed(_) => "INTERNAL".into(),
        }
    }
}

pub fn exit_for_code(code: &str) -> i32 {
    match code {
        "AUTH_ERROR" | "NOT_AUTHENTICATED" | "APP_AUTH_FAILED" => exit::AUTH,
        "VALIDATION_ERROR" | "PARTIAL_FAILURE" | "BAD_REQUEST" => exit::VALIDATION,
        "NOT_FOUND" | "NOT_FOUND_REMOVE" => exit::NOT_FOUND,
        "ACL_DENIED" => exit::ACL_DENIED,
        "SERVER_UNREACHABLE" | "SERVER_ERROR" => exit::UNREACHABLE,
        "PIN_MISMATCH" => exit::PIN_MISMATCH,
        "PROVIDER_UNAVAILABLE" => exit::PROVIDER,
        "STORE_ERROR" | "STORE_LOCKED" => exit::STORE,
        "PROTOCOL_ERROR" => exit::PROTOCOL,
        "CONFIG_ERROR" => exit::CONFIG,
        _ => exit::INTERNAL,
    }
}

impl From<IpcError> for CliError {
    fn from(e: IpcError) -> Self {
        match e {
            IpcError::Agent { code, message } => CliError::coded(&code, message),
            IpcError::Connect { path, source } => CliError::coded("AGENT_UNREACHABLE", format!("{path}: {source}")),
            other => CliError::coded("PROTOCOL_ERROR", other.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        let code = match &e {
            ClientError::Transport(TransportError::PinMismatch) => "PIN_MISMATCH".to_string(),
            ClientError::Transport(TransportError::Config(m)) => return CliError::Config(m.clone()),
            ClientError::Server(info) if info.code == ErrorCode::ServerError => "SERVER_ERROR".into(),
            other => peershare_net::ipc::error_code(other),
        };
        CliError::coded(&code, e.to_string())
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        ClientError::Transport(e).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_map_to_distinct_exits() {
        let codes = [
            "AUTH_ERROR",
            "VALIDATION_ERROR",
            "NOT_FOUND",
            "ACL_DENIED",
            "SERVER_UNREACHABLE",
            "PIN_MISMATCH",
            "PROVIDER_UNAVAILABLE",
            "STORE_ERROR",
            "PROTOCOL_ERROR",
            "CONFIG_ERROR",
        ];
        let exits: std::collections::BTreeSet<i32> = codes.iter().map(|c| exit_for_code(c)).collect();
        assert_eq!(exits.len(), codes.len());
        assert!(!exits.contains(&exit::OK) && !exits.contains(&exit::USAGE) && !exits.contains(&exit::INTERNAL));
    }

    #[test]
    fn pin_mismatch_keeps_its_own_code() {
        let e: CliError = TransportError::PinMismatch.into();
        assert_eq!(e.exit_code(), exit::PIN_MISMATCH);
        let e: CliError = TransportError::Config("no pin".into()).into();
        assert_eq!(e.exit_code(), exit::CONFIG);
    }
}
