//! PeerShare: distribution of application data (keys, identifier bindings,
//! bearer tokens) to social contacts, with sharing policies resolved against
//! a social network.
//!
//! The crate holds everything that does not need a socket: the domain model,
//! the wire codec, the social-provider abstraction with its mock, the server
//! logic and the device-side client service.

mod b64;
pub mod client;
pub mod clock;
pub mod fixtures;
pub mod model;
pub mod protocol;
pub mod provider;
pub mod server;

pub use clock::{Clock, ManualClock, SystemClock};
