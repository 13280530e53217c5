//! Server registry: a JSON document listing model and cloud servers.
//!
//! ```json
//! {
//!   "servers": [
//!     {"id": "xray-1", "role": "model", "endpoint": "127.0.0.1:7001",
//!      "capabilities": ["cnn-chest-xray"], "public_key": "<hex>",
//!      "input_shape": [1, 28, 28], "labels": ["Atelectasis", "..."]},
//!     {"id": "cloud-1", "role": "cloud", "endpoint": "127.0.0.1:7002",
//!      "capabilities": ["secure-compute"], "public_key": "<hex>"}
//!   ],
//!   "signature": "<hex Ed25519 signature, optional>"
//! }
//! ```
//!
//! The signature covers the compact JSON serialization of `servers`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::identity::{parse_key, PublicKeyBytes};
use crate::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerRole {
    Model,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEntry {
    pub id: String,
    pub role: ServerRole,
    pub endpoint: String,
    pub capabilities: Vec<String>,
    /// Hex X25519 static key.
    pub public_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub labels: Vec<String>,
}

impl ServerEntry {
    pub fn key(&self) -> Result<PublicKeyBytes, NetError> {
        parse_key(&self.public_key).map_err(|e| NetError::Registry(format!("{}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerRegistry {
    pub servers: Vec<ServerEntry>,
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    servers: Vec<ServerEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    signature: Option<String>,
}

impl ServerRegistry {
    pub fn validate(&self) -> Result<(), NetError> {
        let mut ids = HashSet::new();
        for s in &self.servers {
            if !ids.insert(s.id.as_str()) {
                return Err(NetError::Registry(format!("duplicate server id {}", s.id)));
            }
            if s.capabilities.is_empty() {
                return Err(NetError::Registry(format!("{} has no capability tags", s.id)));
            }
            s.key()?;
        }
        Ok(())
    }

    pub fn models(&self) -> impl Iterator<Item = &ServerEntry> {
        self.servers.iter().filter(|s| s.role == ServerRole::Model)
    }

    pub fn first_cloud(&self) -> Option<&ServerEntry> {
        self.servers.iter().find(|s| s.role == ServerRole::Cloud)
    }

    fn signed_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.servers).expect("registry serializes")
    }

    pub fn sign(&self, key: &SigningKey) -> String {
        hex::encode(key.sign(&self.signed_bytes()).to_bytes())
    }

    /// Parses and validates a registry. With `trusted` set the document must
    /// carry a valid signature by that key.
    pub fn from_json(text: &str, trusted: Option<&VerifyingKey>) -> Result<Self, NetError> {
        let file: RegistryFile = serde_json::from_str(text).map_err(|e| NetError::Registry(e.to_string()))?;
        let reg = ServerRegistry { servers: file.servers };
        if let Some(key) = trusted {
            let sig = file.signature.ok_or_else(|| NetError::Registry("registry is not signed".into()))?;
            let bytes: [u8; 64] = hex::decode(&sig)
                .ok()
                .and_then(|b| b.try_into().ok())
                .ok_or_else(|| NetError::Registry("malformed signature".into()))?;
            key.verify(&reg.signed_bytes(), &Signature::from_bytes(&bytes))
                .map_err(|_| NetError::Registry("signature does not verify".into()))?;
        }
        reg.validate()?;
        Ok(reg)
    }

    pub fn load(path: &Path, trusted: Option<&VerifyingKey>) -> Result<Self, NetError> {
        let text = fs::read_to_string(path).map_err(|e| NetError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, trusted)
    }

    pub fn to_json(&self, signer: Option<&SigningKey>) -> String {
        let file = RegistryFile { servers: self.servers.clone(), signature: signer.map(|k| self.sign(k)) };
        serde_json::to_string_pretty(&file).expect("registry serializes")
    }
}

pub fn parse_verifying_key(text: &str) -> Result<VerifyingKey, NetError> {
    VerifyingKey::from_bytes(&parse_key(text)?).map_err(|e| NetError::Key(e.to_string()))
}
