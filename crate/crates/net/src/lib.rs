//! Networking for PeerShare: the HTTPS server and the agent's pinned
//! transport, the provider HTTP service and its client, and agent IPC.

pub mod https;
pub mod ipc;
pub mod provider_http;
pub mod rogue;
pub mod tls;
pub mod transport;

pub use https::RunningServer;
pub use provider_http::{HttpProvider, RunningProvider};
pub use tls::{Pin, SelfSigned};
pub use transport::PinnedHttpsTransport;
