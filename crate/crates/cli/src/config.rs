//! TOML configuration. Every section is optional; command-line flags win
//! over the file. Relative paths are resolved against the file's directory.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

pub const DEFAULT_APP_ID: &str = "peershare-app";
pub const DEFAULT_NETWORK: &str = "mocknet";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Where agents reach the server, e.g. `https://127.0.0.1:8443`.
    pub server_url: Option<String>,
    /// PEM file with the server certificate, or `sha256:<hex>`.
    pub pin: Option<String>,
    /// Additional accepted pins (rotation).
    #[serde(default)]
    pub extra_pins: Vec<String>,
    /// Base URL of the provider service.
    pub provider_url: Option<String>,
    /// The PeerShare application id tokens must be issued to.
    pub app_id: Option<String>,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default)]
    pub provider: ProviderSection,
    #[serde(default)]
    pub agent: AgentSection,
    /// `platform/app_id` = secret. Empty trusts any local caller.
    #[serde(default)]
    pub apps: BTreeMap<String, String>,
    #[serde(skip)]
    base: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub listen: Option<SocketAddr>,
    pub db: Option<PathBuf>,
    pub cert: Option<PathBuf>,
    pub key: Option<PathBuf>,
    /// Provider base URL, or `in-process` for a private mock.
    pub provider: Option<String>,
    pub change_poll_ms: Option<u64>,
    pub purge_interval_secs: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSection {
    pub listen: Option<SocketAddr>,
    pub network: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    /// Holds one directory and one socket per user.
    pub data_dir: Option<PathBuf>,
    pub refresh_interval: Option<i64>,
    pub device_id: Option<String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    /// The file named by `--config`, else `PEERSHARE_CONFIG`, else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Config, CliError> {
        match explicit {
            Some(path) => Config::load(path),
            None => match std::env::var_os("PEERSHARE_CONFIG") {
                Some(path) => Config::load(Path::new(&path)),
                None => Ok(Config::default()),
            },
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    /// Pins may be file paths, which are relative to the config file.
    pub fn resolve_pin(&self, pin: &str) -> String {
        if pin.starts_with("sha256:") {
            pin.to_string()
        } else {
            self.resolve(Path::new(pin)).display().to_string()
        }
    }

    pub fn app_id(&self) -> String {
        self.app_id.clone().unwrap_or_else(|| DEFAULT_APP_ID.into())
    }

    pub fn network(&self) -> String {
        self.provider.network.clone().unwrap_or_else(|| DEFAULT_NETWORK.into())
    }

    pub fn agent_dir(&self) -> PathBuf {
        self.resolve(self.agent.data_dir.as_deref().unwrap_or(Path::new("agents")))
    }

    pub fn socket_for(&self, user: &str) -> PathBuf {
        self.agent_dir().join(format!("{}.sock", sanitize(user)))
    }

    pub fn user_dir(&self, user: &str) -> PathBuf {
        self.agent_dir().join(sanitize(user))
    }
}

/// Keeps user names usable as file names.
pub fn sanitize(user: &str) -> String {
    user.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("peershare.toml");
        std::fs::write(
            &path,
            r#"
server_url = "https://127.0.0.1:8443"
pin = "certs/server.pem"
[server]
db = "server.sqlite"
change_poll_ms = 100
[agent]
data_dir = "/var/lib/agents"
[apps]
"android/org.peersense:5f3c2a" = "s3cret"
"#,
        )
        .unwrap();
        let c = Config::load(&path).unwrap();
        assert_eq!(
            c.resolve(c.server.db.as_deref().unwrap()),
            dir.path().join("server.sqlite")
        );
        assert_eq!(
            c.resolve_pin(c.pin.as_deref().unwrap()),
            dir.path().join("certs/server.pem").display().to_string()
        );
        assert_eq!(c.resolve_pin("sha256:ab"), "sha256:ab");
        assert_eq!(c.socket_for("alice@x"), PathBuf::from("/var/lib/agents/alice_x.sock"));
        assert_eq!(c.apps.len(), 1);
        assert_eq!(c.app_id(), DEFAULT_APP_ID);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "sever_url = \"typo\"\n").unwrap();
        assert!(matches!(Config::load(&path), Err(CliError::Config(_))));
        assert!(matches!(
            Config::load(&dir.path().join("missing.toml")),
            Err(CliError::Config(_))
        ));
    }
}
