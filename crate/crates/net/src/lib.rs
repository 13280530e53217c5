//! Networked deployment: authenticated channels, the model-server and cloud
//! daemons, and the user-side flow of routing, session keys, share dispatch
//! and reconstruction.

pub mod channel;
pub mod compose;
pub mod control;
mod error;
pub mod identity;
pub mod registry;
pub mod relay;
pub mod router;
pub mod server;
pub mod session;
pub mod user;

pub use error::NetError;
