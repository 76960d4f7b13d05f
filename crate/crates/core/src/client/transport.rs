//! How the agent reaches the server. A transport moves encoded request bytes
//! for one method and returns the encoded response; the agent never sees
//! anything but the canonical encoding.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::protocol::Method;
use crate::server::Server;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("server unreachable: {0}")]
    Unreachable(String),
    #[error("server certificate does not match the pin")]
    PinMismatch,
    #[error("transport configuration: {0}")]
    Config(String),
    /// The request may have been delivered but no response came back.
    #[error("connection lost after sending")]
    Lost,
}

pub trait Transport: Send + Sync {
    fn send(&self, method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn send(&self, method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        (**self).send(method, request)
    }
}

/// Calls a server in the same process.
#[derive(Clone)]
pub struct InProcessTransport {
    server: Arc<Server>,
}

impl InProcessTransport {
    pub fn new(server: Arc<Server>) -> Self {
        Self { server }
    }
}

impl Transport for InProcessTransport {
    fn send(&self, _method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.server.handle_bytes(request))
    }
}

/// Keeps a copy of every request that passes through.
pub struct RecordingTransport<T> {
    inner: T,
    log: Mutex<Vec<(Method, Vec<u8>)>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<(Method, Vec<u8>)> {
        self.log.lock().unwrap().clone()
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        self.log.lock().unwrap().push((method, request.to_vec()));
        self.inner.send(method, request)
    }
}

/// Failure injection for sync tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    /// Fail without delivering.
    Offline,
    /// Deliver, then lose the response.
    LoseResponse,
}

/// Injects a [`Fault`] into every request, or only into the request with a
/// given sequence number (0-based, counted across all methods).
pub struct FlakyTransport<T> {
    inner: T,
    sent: AtomicUsize,
    plan: Mutex<FaultPlan>,
}

#[derive(Debug, Clone, Copy)]
struct FaultPlan {
    fault: Fault,
    at: Option<usize>,
}

impl<T: Transport> FlakyTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            sent: AtomicUsize::new(0),
            plan: Mutex::new(FaultPlan {
                fault: Fault::None,
                at: None,
            }),
        }
    }

    /// Applies `fault` to every following request.
    pub fn set_fault(&self, fault: Fault) {
        *self.plan.lock().unwrap() = FaultPlan { fault, at: None };
    }

    /// Applies `fault` only to the request numbered `at`.
    pub fn fault_at(&self, at: usize, fault: Fault) {
        *self.plan.lock().unwrap() = FaultPlan { fault, at: Some(at) };
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn sent(&self) -> usize {
        self.sent.load(Ordering::SeqCst)
    }
}

impl<T: Transport> Transport for FlakyTransport<T> {
    fn send(&self, method: Method, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let n = self.sent.fetch_add(1, Ordering::SeqCst);
        let plan = *self.plan.lock().unwrap();
        let fault = match plan.at {
            Some(at) if at != n => Fault::None,
            _ => plan.fault,
        };
        match fault {
            Fault::None => self.inner.send(method, request),
            Fault::Offline => Err(TransportError::Unreachable("injected".into())),
            Fault::LoseResponse => {
                let _ = self.inner.send(method, request)?;
                Err(TransportError::Lost)
            }
        }
    }
}
