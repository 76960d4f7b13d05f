//! A TLS endpoint that accepts anyone and records what they send. Used to
//! show that a pinned client never hands application bytes to an impostor.

use std::io::Read;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rustls::{ServerConfig, ServerConnection, StreamOwned};

#[derive(Debug, Default)]
pub struct Tally {
    pub connections: AtomicUsize,
    pub handshakes: AtomicUsize,
    /// Decrypted bytes received after a completed handshake.
    pub app_bytes: AtomicUsize,
}

pub struct RecordingTlsServer {
    addr: SocketAddr,
    tally: Arc<Tally>,
    stop: Arc<AtomicBool>,
    thread: Option<std::thread::JoinHandle<()>>,
}

fn absorb(tls: Arc<ServerConfig>, tcp: TcpStream, tally: &Tally) {
    let _ = tcp.set_read_timeout(Some(Duration::from_secs(5)));
    let Ok(conn) = ServerConnection::new(tls) else { return };
    let mut stream = StreamOwned::new(conn, tcp);
    let mut buf = [0u8; 4096];
    loop {
        match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                tally.app_bytes.fetch_add(n, Ordering::SeqCst);
            }
        }
    }
    if !stream.conn.is_handshaking() {
        tally.handshakes.fetch_add(1, Ordering::SeqCst);
    }
}

impl RecordingTlsServer {
    pub fn start(tls: Arc<ServerConfig>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let tally = Arc::new(Tally::default());
        let stop = Arc::new(AtomicBool::new(false));
        let (t, s) = (tally.clone(), stop.clone());
        let thread = std::thread::spawn(move || {
            while !s.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((tcp, _)) => {
                        t.connections.fetch_add(1, Ordering::SeqCst);
                        let _ = tcp.set_nonblocking(false);
                        absorb(tls.clone(), tcp, &t);
                    }
                    Err(_) => std::thread::sleep(Duration::from_millis(10)),
                }
            }
        });
        Ok(Self {
            addr,
            tally,
            stop,
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("https://{}", self.addr)
    }

    pub fn tally(&self) -> &Tally {
        &self.tally
    }
}

impl Drop for RecordingTlsServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
