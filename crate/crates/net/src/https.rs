//! The PeerShare server over HTTPS. Every method is a POST to its own path;
//! protocol-level failures are still HTTP 200 with `"status":"error"`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use hyper_util::rt::TokioIo;
use hyper_util::service::TowerToHyperService;
use rustls::ServerConfig;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio_rustls::TlsAcceptor;
use tracing::{debug, info, warn};

use peershare_core::protocol::{self, decode_request, encode_response, ErrorCode, Method, CONTENT_TYPE};
use peershare_core::server::Server;

const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);

pub fn router(server: Arc<Server>) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/{method}", post(call))
        .with_state(server)
}

async fn call(State(server): State<Arc<Server>>, Path(name): Path<String>, body: Bytes) -> Response {
    let Some(method) = Method::from_path(&format!("/{name}")) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    let reply = tokio::task::spawn_blocking(move || match decode_request(&body) {
        Ok(request) if request.body.method() != method => encode_response(&protocol::Response::error(
            ErrorCode::ValidationError,
            format!("{} request posted to {}", request.body.method(), method.path()),
        )),
        Ok(request) => encode_response(&server.handle(request)),
        // Let the server produce the canonical decode error.
        Err(_) => server.handle_bytes(&body),
    })
    .await;
    match reply {
        Ok(bytes) => ([(header::CONTENT_TYPE, CONTENT_TYPE)], bytes).into_response(),
        Err(e) => {
            warn!(error = %e, "request handler panicked");
            StatusCode::INTERNAL_SERVER_ERROR.into_response()
        }
    }
}

/// Accepts TLS connections until `shutdown` resolves.
pub async fn serve_tls(
    listener: TcpListener,
    tls: Arc<ServerConfig>,
    app: Router,
    shutdown: impl std::future::Future<Output = ()>,
) {
    let acceptor = TlsAcceptor::from(tls);
    tokio::pin!(shutdown);
    loop {
        let (tcp, peer) = tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => match accepted {
                Ok(pair) => pair,
                Err(e) => {
                    warn!(error = %e, "accept failed");
                    tokio::time::sleep(Duration::from_millis(50)).await;
                    continue;
                }
            },
        };
        let _ = tcp.set_nodelay(true);
        let acceptor = acceptor.clone();
        let app = app.clone();
        tokio::spawn(async move {
            let stream = match tokio::time::timeout(HANDSHAKE_TIMEOUT, acceptor.accept(tcp)).await {
                Ok(Ok(stream)) => stream,
                Ok(Err(e)) => return debug!(%peer, error = %e, "handshake failed"),
                Err(_) => return debug!(%peer, "handshake timed out"),
            };
            let service = TowerToHyperService::new(app);
            if let Err(e) = hyper::server::conn::http1::Builder::new()
                .serve_connection(TokioIo::new(stream), service)
                .await
            {
                debug!(%peer, error = %e, "connection ended with error");
            }
        });
    }
    info!("https server stopped");
}

/// A server running on its own runtime thread; stops when dropped.
pub struct RunningServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn start(addr: SocketAddr, tls: Arc<ServerConfig>, server: Arc<Server>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new()
            .name("peershare-https".into())
            .spawn(move || {
                runtime.block_on(serve_tls(listener, tls, router(server), async {
                    let _ = stopped.await;
                }));
            })?;
        info!(%addr, "https server listening");
        Ok(Self {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("https://{}", self.addr)
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}
