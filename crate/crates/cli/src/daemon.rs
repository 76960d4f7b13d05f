//! Long-running commands. Each prints one readiness line once it accepts
//! connections and exits cleanly on SIGINT or SIGTERM.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use tokio::net::TcpListener;
use tracing::{info, warn};

use peershare_core::client::{Agent, AgentConfig, RefreshTimer, DEFAULT_REFRESH_INTERVAL};
use peershare_core::clock::{Clock, SystemClock};
use peershare_core::model::SocialIdentity;
use peershare_core::provider::{MockProvider, SocialProvider};
use peershare_core::server::{Server, Store, StoreError};
use peershare_net::ipc::{AppAuth, IpcServer};
use peershare_net::tls::{load_certs, load_key, server_config};
use peershare_net::{HttpProvider, PinnedHttpsTransport, SelfSigned};

use crate::args::{ProviderArgs, ServeArgs};
use crate::config::Config;
use crate::error::CliError;
use crate::output::Output;
use crate::Globals;

pub const DEFAULT_SERVER_LISTEN: &str = "127.0.0.1:8443";
pub const DEFAULT_PROVIDER_LISTEN: &str = "127.0.0.1:8080";
/// Polling is the fallback when the provider cannot push; 60 s by default.
pub const DEFAULT_CHANGE_POLL_MS: u64 = 60_000;
pub const DEFAULT_PURGE_SECS: u64 = 300;

async fn shutdown_signal() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = ctrl_c.await;
                return;
            }
        };
        tokio::select! {
            _ = ctrl_c => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    let _ = ctrl_c.await;
    info!("shutting down");
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?)
}

fn ready(out: &Output, what: &str, detail: serde_json::Value) -> Result<(), CliError> {
    let mut doc = json!({ "ready": what });
    if let (Some(d), serde_json::Value::Object(extra)) = (doc.as_object_mut(), detail) {
        d.extend(extra);
    }
    out.either(&format!("{what} ready: {}", doc), &doc)
}

pub fn open_store(path: &Path) -> Result<Store, CliError> {
    Store::open(path).map_err(|e| match e {
        StoreError::Locked => CliError::coded(
            "STORE_LOCKED",
            format!("{} is in use by another process", path.display()),
        ),
        other => CliError::coded("STORE_ERROR", format!("{}: {other}", path.display())),
    })
}

pub fn serve(cfg: &Config, args: &ServeArgs, out: &Output) -> Result<(), CliError> {
    let listen = args
        .listen
        .or(cfg.server.listen)
        .unwrap_or_else(|| DEFAULT_SERVER_LISTEN.parse().unwrap());
    let resolve = |flag: &Option<std::path::PathBuf>, file: &Option<std::path::PathBuf>, default: &str| {
        flag.clone()
            .unwrap_or_else(|| cfg.resolve(file.as_deref().unwrap_or(Path::new(default))))
    };
    let db = resolve(&args.db, &cfg.server.db, "server.sqlite");
    let cert = resolve(&args.cert, &cfg.server.cert, "server.pem");
    let key = resolve(&args.key, &cfg.server.key, "server.key");
    if args.generate_cert && !cert.exists() && !key.exists() {
        let host = listen.ip().to_string();
        SelfSigned::generate(&["localhost", &host])
            .and_then(|c| c.write(&cert, &key))
            .map_err(|e| CliError::Config(e.to_string()))?;
        info!(cert = %cert.display(), "generated self-signed certificate");
    }
    let tls = load_certs(&cert)
        .and_then(|certs| server_config(certs, load_key(&key)?))
        .map_err(|e| CliError::Config(e.to_string()))?;

    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let provider_spec = args
        .provider
        .clone()
        .or_else(|| cfg.server.provider.clone())
        .or_else(|| cfg.provider_url.clone());
    let provider: Arc<dyn SocialProvider> = match provider_spec.as_deref() {
        None => return Err(CliError::Config("no provider configured (URL or in-process)".into())),
        Some("in-process") => Arc::new(MockProvider::new(cfg.network(), clock.clone())),
        Some(url) => Arc::new(
            HttpProvider::connect(url).map_err(|e| CliError::coded("PROVIDER_UNAVAILABLE", format!("{url}: {e}")))?,
        ),
    };
    let store = open_store(&db)?;
    let server = Arc::new(Server::new(store, clock.clone()).with_provider(provider, cfg.app_id()));
    let poll = Duration::from_millis(
        args.change_poll_ms
            .or(cfg.server.change_poll_ms)
            .unwrap_or(DEFAULT_CHANGE_POLL_MS),
    );
    let changes = server.spawn_change_listener(poll);
    let purge_every = Duration::from_secs(cfg.server.purge_interval_secs.unwrap_or(DEFAULT_PURGE_SECS).max(1));

    let rt = runtime()?;
    let listener = rt
        .block_on(TcpListener::bind(listen))
        .map_err(|e| CliError::coded("BIND_FAILED", format!("{listen}: {e}")))?;
    let addr = listener.local_addr()?;
    let purger = {
        let server = server.clone();
        rt.spawn(async move {
            let mut tick = tokio::time::interval(purge_every);
            loop {
                tick.tick().await;
                let s = server.clone();
                match tokio::task::spawn_blocking(move || s.purge_expired(s.clock().now())).await {
                    Ok(Ok(n)) if n > 0 => info!(purged = n, "expired items removed"),
                    Ok(Err(e)) => warn!(error = %e, "purge failed"),
                    _ => {}
                }
            }
        })
    };
    ready(
        out,
        "server",
        json!({ "url": format!("https://{addr}"), "db": db.display().to_string() }),
    )?;
    rt.block_on(peershare_net::https::serve_tls(
        listener,
        tls,
        peershare_net::https::router(server.clone()),
        shutdown_signal(),
    ));
    purger.abort();
    changes.stop();
    drop(rt);
    // Last handle: the store closes here, after every request has finished.
    drop(server);
    Ok(())
}

pub fn provider(cfg: &Config, args: &ProviderArgs, out: &Output) -> Result<(), CliError> {
    let listen: SocketAddr = args
        .listen
        .or(cfg.provider.listen)
        .unwrap_or_else(|| DEFAULT_PROVIDER_LISTEN.parse().unwrap());
    let network = args.network.clone().unwrap_or_else(|| cfg.network());
    let mock = Arc::new(MockProvider::new(network.clone(), Arc::new(SystemClock)));
    let rt = runtime()?;
    let listener = rt
        .block_on(TcpListener::bind(listen))
        .map_err(|e| CliError::coded("BIND_FAILED", format!("{listen}: {e}")))?;
    let addr = listener.local_addr()?;
    ready(
        out,
        "provider",
        json!({ "url": format!("http://{addr}"), "network": network }),
    )?;
    rt.block_on(async {
        axum::serve(listener, peershare_net::provider_http::router(mock))
            .with_graceful_shutdown(shutdown_signal())
            .await
    })?;
    Ok(())
}

pub fn pin(g: &Globals) -> Result<peershare_net::Pin, CliError> {
    let specs: Vec<String> = if g.pin.is_empty() {
        g.cfg
            .pin
            .iter()
            .chain(&g.cfg.extra_pins)
            .map(|p| g.cfg.resolve_pin(p))
            .collect()
    } else {
        g.pin.clone()
    };
    if specs.is_empty() {
        return Err(CliError::Config(
            "no pinned server certificate configured (--pin)".into(),
        ));
    }
    let mut pin = peershare_net::Pin::default();
    for spec in specs {
        pin = pin.merge(peershare_net::Pin::parse(&spec).map_err(|e| CliError::Config(e.to_string()))?);
    }
    Ok(pin)
}

pub fn server_url(g: &Globals) -> Result<String, CliError> {
    g.server_url
        .clone()
        .or_else(|| g.cfg.server_url.clone())
        .ok_or_else(|| CliError::Config("no server URL configured (--server-url)".into()))
}

pub fn provider_url(g: &Globals) -> Result<String, CliError> {
    g.provider_url
        .clone()
        .or_else(|| g.cfg.provider_url.clone())
        .ok_or_else(|| CliError::Config("no provider URL configured (--provider-url)".into()))
}

pub struct AgentRun<'a> {
    pub user: &'a str,
    pub token: Option<String>,
    pub issue_token: bool,
    pub device_id: Option<String>,
    pub refresh_interval: Option<i64>,
    pub socket: Option<std::path::PathBuf>,
}

pub fn agent(g: &Globals, run: AgentRun<'_>, out: &Output) -> Result<(), CliError> {
    let cfg = &g.cfg;
    // Fail closed: no pin, no agent.
    let transport = PinnedHttpsTransport::new(&server_url(g)?, pin(g)?)?;
    let config = AgentConfig {
        data_dir: Some(cfg.user_dir(run.user)),
        refresh_interval: run
            .refresh_interval
            .or(cfg.agent.refresh_interval)
            .unwrap_or(DEFAULT_REFRESH_INTERVAL),
        device_id: run
            .device_id
            .or_else(|| cfg.agent.device_id.clone())
            .unwrap_or_else(|| "device-1".into()),
    };
    std::fs::create_dir_all(cfg.agent_dir())?;
    let mut agent = Agent::new(config, Arc::new(transport), Arc::new(SystemClock));
    let remote = provider_url(g).ok().map(|url| HttpProvider::new(url, cfg.network()));
    if let Some(p) = &remote {
        agent = agent.with_provider(Arc::new(p.clone()));
    }
    let agent = Arc::new(agent);
    let token = match (run.token, run.issue_token) {
        (Some(t), _) => Some(t),
        (None, true) => {
            let p = remote
                .as_ref()
                .ok_or_else(|| CliError::Config("--issue-token needs a provider URL".into()))?;
            let issued = p
                .issue_token(run.user, &cfg.app_id(), 86400)
                .map_err(|e| CliError::coded("PROVIDER_UNAVAILABLE", e.to_string()))?;
            Some(issued.token)
        }
        (None, false) => None,
    };
    if let Some(token) = token {
        agent.login(SocialIdentity::new(cfg.network(), run.user, run.user), token)?;
    }
    let socket = run.socket.unwrap_or_else(|| cfg.socket_for(run.user));
    let auth = AppAuth::new(cfg.apps.iter().map(|(k, v)| (k.as_str(), v.as_str())));
    let ipc = IpcServer::start(&socket, agent.clone(), auth)
        .map_err(|e| CliError::coded("BIND_FAILED", format!("{}: {e}", socket.display())))?;
    let timer = RefreshTimer::spawn(agent.clone(), Duration::from_secs(1));
    ready(
        out,
        "agent",
        json!({ "user": run.user, "socket": socket.display().to_string() }),
    )?;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(shutdown_signal());
    drop(timer);
    drop(ipc);
    agent.logout();
    Ok(())
}
