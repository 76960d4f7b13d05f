//! Agent-side HTTPS transport. Blocking from the caller's point of view; it
//! drives its own single-threaded runtime and keeps one connection alive
//! between calls.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use http_body_util::{BodyExt, Full};
use hyper::body::Bytes;
use hyper::client::conn::http1::SendRequest;
use hyper::header::{CONTENT_TYPE, HOST};
use hyper::{Request, StatusCode, Uri};
use hyper_util::rt::TokioIo;
use rustls::pki_types::ServerName;
use tokio::net::TcpStream;
use tokio_rustls::TlsConnector;
use tracing::debug;

use peershare_core::client::{Transport, TransportError};
use peershare_core::protocol::{Method, CONTENT_TYPE as JSON};

use crate::tls::{is_pin_failure, pinned_client_config, Pin};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(15);

pub struct PinnedHttpsTransport {
    host: String,
    port: u16,
    authority: String,
    server_name: ServerName<'static>,
    connector: TlsConnector,
    timeout: Duration,
    runtime: tokio::runtime::Runtime,
    conn: Mutex<Option<SendRequest<Full<Bytes>>>>,
}

impl std::fmt::Debug for PinnedHttpsTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PinnedHttpsTransport")
            .field("authority", &self.authority)
            .finish_non_exhaustive()
    }
}

fn config_err(e: impl std::fmt::Display) -> TransportError {
    TransportError::Config(e.to_string())
}

impl PinnedHttpsTransport {
    /// `url` must be `https://host[:port]`. Must not be used from inside an
    /// async runtime.
    pub fn new(url: &str, pin: Pin) -> Result<Self, TransportError> {
        let uri: Uri = url.parse().map_err(config_err)?;
        if uri.scheme_str() != Some("https") {
            return Err(config_err(format!("{url}: only https:// is supported")));
        }
        let host = uri.host().ok_or_else(|| config_err(format!("{url}: no host")))?;
        let host = host.trim_start_matches('[').trim_end_matches(']').to_string();
        let port = uri.port_u16().unwrap_or(443);
        let server_name = ServerName::try_from(host.clone()).map_err(config_err)?;
        let config = pinned_client_config(pin).map_err(config_err)?;
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .map_err(config_err)?;
        Ok(Self {
            authority: uri.authority().map(|a| a.to_string()).unwrap_or_else(|| host.clone()),
            host,
            port,
            server_name,
            connector: TlsConnector::from(config),
            timeout: DEFAULT_TIMEOUT,
            runtime,
            conn: Mutex::new(None),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    async fn connect(&self) -> Result<SendRequest<Full<Bytes>>, TransportError> {
        let unreachable = |e: &dyn std::fmt::Display| TransportError::Unreachable(e.to_string());
        let tcp = tokio::time::timeout(self.timeout, TcpStream::connect((self.host.as_str(), self.port)))
            .await
            .map_err(|e| unreachable(&e))?
            .map_err(|e| unreachable(&e))?;
        let _ = tcp.set_nodelay(true);
        // The handshake, including the pin check, completes before any
        // request byte is handed to the connection.
        let tls = match tokio::time::timeout(self.timeout, self.connector.connect(self.server_name.clone(), tcp)).await
        {
            Ok(Ok(tls)) => tls,
            Ok(Err(e)) if e.get_ref().is_some_and(|inner| is_pin_failure(inner)) => {
                return Err(TransportError::PinMismatch)
            }
            Ok(Err(e)) => return Err(unreachable(&e)),
            Err(e) => return Err(unreachable(&e)),
        };
        let (sender, conn) = hyper::client::conn::http1::handshake(TokioIo::new(tls))
            .await
            .map_err(|e| unreachable(&e))?;
        tokio::spawn(async move {
            if let Err(e) = conn.await {
                debug!(error = %e, "connection closed");
            }
        });
        Ok(sender)
    }

    async fn exchange(&self, method: Method, body: &[u8]) -> Result<Vec<u8>, TransportError> {
        let pooled = self.conn.lock().unwrap().take();
        let live = match pooled {
            Some(mut s) => s.ready().await.is_ok().then_some(s),
            None => None,
        };
        let (mut sender, reused) = match live {
            Some(s) => (s, true),
            None => (self.connect().await?, false),
        };
        let request = || {
            Request::post(method.path())
                .header(HOST, &self.authority)
                .header(CONTENT_TYPE, JSON)
                .body(Full::new(Bytes::copy_from_slice(body)))
                .expect("static request parts are valid")
        };
        let response = match tokio::time::timeout(self.timeout, sender.send_request(request())).await {
            Ok(Ok(r)) => r,
            // A kept-alive connection the server already closed: nothing was sent.
            Ok(Err(e)) if reused && e.is_canceled() => {
                sender = self.connect().await?;
                tokio::time::timeout(self.timeout, sender.send_request(request()))
                    .await
                    .map_err(|_| TransportError::Lost)?
                    .map_err(|_| TransportError::Lost)?
            }
            Ok(Err(_)) | Err(_) => return Err(TransportError::Lost),
        };
        let status = response.status();
        let bytes = tokio::time::timeout(self.timeout, response.into_body().collect())
            .await
            .map_err(|_| TransportError::Lost)?
            .map_err(|_| TransportError::Lost)?
            .to_bytes();
        *self.conn.lock().unwrap() = Some(sender);
        match status {
            StatusCode::OK => Ok(bytes.to_vec()),
            s if s.is_server_error() => Err(TransportError::Lost),
            s => Err(TransportError::Config(format!("{} answered HTTP {s}", method.path()))),
        }
    }
}

impl Transport for PinnedHttpsTransport {
    fn send(&self, method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.runtime.block_on(self.exchange(method, request))
    }
}

/// Convenience for callers holding the transport behind a trait object.
pub fn connect(url: &str, pin: Pin) -> Result<Arc<dyn Transport>, TransportError> {
    Ok(Arc::new(PinnedHttpsTransport::new(url, pin)?))
}
