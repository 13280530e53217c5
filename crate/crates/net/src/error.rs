use std::io;

use privinfer_core::model::ModelError;
use privinfer_core::runtime::RuntimeError;
use privinfer_core::sharing::ShareError;
use privinfer_core::transport::TransportError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("timed out connecting to {0}")]
    ConnectTimeout(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("bad key material: {0}")]
    Key(String),
    #[error("no route: {0}")]
    NoRoute(String),
    #[error("query is empty")]
    EmptyQuery,
    #[error("registry: {0}")]
    Registry(String),
    #[error("router backend: {0}")]
    Router(String),
    #[error("authenticated decryption failed")]
    Aead,
    #[error("session key confirmation failed")]
    Confirmation,
    #[error("replayed session establishment")]
    Replay,
    #[error("malformed control message: {0}")]
    Protocol(String),
    #[error("{server} reported {kind}: {message}")]
    Remote { server: String, kind: String, message: String },
    #[error("input shape {got:?} does not match the model input {expected:?}")]
    InputShape { got: Vec<usize>, expected: Vec<usize> },
    #[error("{labels} labels for {logits} logits")]
    Labels { labels: usize, logits: usize },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Share(#[from] ShareError),
}

impl NetError {
    /// Short machine-readable name used in error replies.
    pub fn kind(&self) -> &'static str {
        match self {
            NetError::Io(_) | NetError::ConnectTimeout(_) => "io",
            NetError::Bind { .. } => "bind",
            NetError::Transport(_) => "transport",
            NetError::Auth(_) | NetError::Key(_) => "auth",
            NetError::NoRoute(_) | NetError::EmptyQuery => "no-route",
            NetError::Registry(_) => "registry",
            NetError::Router(_) => "router",
            NetError::Aead => "aead",
            NetError::Confirmation => "confirmation",
            NetError::Replay => "replay",
            NetError::Protocol(_) => "protocol",
            NetError::Remote { .. } => "remote",
            NetError::InputShape { .. } | NetError::Labels { .. } | NetError::Share(_) => "input",
            NetError::Runtime(_) => "inference",
            NetError::Model(_) => "model",
        }
    }
}
