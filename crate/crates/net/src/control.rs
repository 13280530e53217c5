//! Control plane: one JSON object per line, carried in `Control` frames over an
//! authenticated channel.
//!
//! | request     | from -> to           | reply      |
//! |-------------|----------------------|------------|
//! | `establish` | user -> cloud        | `confirm`  |
//! | `infer`     | user -> cloud        | `accepted`, later `result` |
//! | `infer`     | user -> model server | `result`   |
//! | `join`      | model server -> cloud| none; the two-party protocol follows |
//!
//! Any request may be answered with `error`.

use privinfer_core::transport::{CommStats, Tag, Transport};
use serde::{Deserialize, Serialize};

use crate::NetError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Establish {
        /// Hex encapsulation of the session key.
        encapsulation: String,
    },
    Infer {
        session: String,
        task: String,
        /// Hex share bytes: plaintext for the model server, sealed under the
        /// session key for the cloud.
        share: String,
        /// Cloud public key the model server must use, from the route plan.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cloud_key: Option<String>,
    },
    Join {
        session: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Reply {
    Confirm { mac: String },
    Accepted,
    Result { share: String, stats: CommStats },
    Error { kind: String, message: String },
}

pub fn send_json<T: Serialize>(chan: &mut dyn Transport, msg: &T) -> Result<(), NetError> {
    let mut line = serde_json::to_vec(msg).map_err(|e| NetError::Protocol(e.to_string()))?;
    line.push(b'\n');
    chan.send(Tag::Control, &line)?;
    Ok(())
}

pub fn recv_json<T: for<'de> Deserialize<'de>>(chan: &mut dyn Transport) -> Result<T, NetError> {
    let body = chan.recv(Tag::Control)?;
    let line = body.strip_suffix(b"\n").ok_or_else(|| NetError::Protocol("missing line terminator".into()))?;
    serde_json::from_slice(line).map_err(|e| NetError::Protocol(e.to_string()))
}

/// Receives a reply, turning an `error` reply into [`NetError::Remote`].
pub fn recv_reply(chan: &mut dyn Transport, server: &str) -> Result<Reply, NetError> {
    match recv_json::<Reply>(chan)? {
        Reply::Error { kind, message } => Err(NetError::Remote { server: server.to_string(), kind, message }),
        r => Ok(r),
    }
}

pub fn decode_hex(field: &str, text: &str) -> Result<Vec<u8>, NetError> {
    hex::decode(text).map_err(|e| NetError::Protocol(format!("{field}: {e}")))
}
