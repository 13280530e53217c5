use std::io;

use privinfer_core::model::ModelError;
use privinfer_core::runtime::RuntimeError;
use privinfer_core::transport::TransportError;
use privinfer_net::NetError;
use thiserror::Error;

/// Process exit codes. Each error class has its own code.
pub mod exit {
    pub const OK: u8 = 0;
    pub const INTERNAL: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const INVALID_INPUT: u8 = 3;
    pub const NO_ROUTE: u8 = 4;
    pub const UNREACHABLE: u8 = 5;
    pub const AUTH: u8 = 6;
    pub const INTEGRITY: u8 = 7;
    pub const PROTOCOL: u8 = 8;
    pub const BIND: u8 = 9;
    pub const ROUTER: u8 = 10;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{0}: {1}")]
    Io(String, #[source] io::Error),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("internal error: {0}")]
    Internal(String),
}

fn transport_code(e: &TransportError) -> u8 {
    match e {
        TransportError::Io(_) | TransportError::Timeout | TransportError::Closed => exit::UNREACHABLE,
        TransportError::BadMac | TransportError::WrongSession => exit::INTEGRITY,
        TransportError::Auth(_) => exit::AUTH,
        _ => exit::PROTOCOL,
    }
}

fn runtime_code(e: &RuntimeError) -> u8 {
    match e.transport() {
        Some(t) => transport_code(t),
        None => match e {
            RuntimeError::Model(_) => exit::INVALID_INPUT,
            _ => exit::PROTOCOL,
        },
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Input(_) | CliError::Io(..) | CliError::Model(_) => exit::INVALID_INPUT,
            CliError::Runtime(e) => runtime_code(e),
            CliError::Internal(_) => exit::INTERNAL,
            CliError::Net(e) => match e {
                NetError::Io(_) | NetError::ConnectTimeout(_) => exit::UNREACHABLE,
                NetError::Bind { .. } => exit::BIND,
                NetError::Transport(t) => transport_code(t),
                NetError::Auth(_) | NetError::Key(_) => exit::AUTH,
                NetError::NoRoute(_) | NetError::EmptyQuery => exit::NO_ROUTE,
                NetError::Router(_) => exit::ROUTER,
                NetError::Aead | NetError::Confirmation | NetError::Replay => exit::INTEGRITY,
                NetError::Protocol(_) | NetError::Remote { .. } => exit::PROTOCOL,
                NetError::Registry(_)
                | NetError::InputShape { .. }
                | NetError::Labels { .. }
                | NetError::Share(_)
                | NetError::Model(_) => exit::INVALID_INPUT,
                NetError::Runtime(r) => runtime_code(r),
            },
        }
    }
}
