//! Static X25519 identities of the servers.

use std::fs;
use std::path::Path;

use rand::rngs::OsRng;
use x25519_dalek::{PublicKey, StaticSecret};

use crate::NetError;

pub type PublicKeyBytes = [u8; 32];

pub struct Identity {
    secret: StaticSecret,
    public: PublicKey,
}

impl Identity {
    pub fn generate() -> Self {
        Self::from_secret(StaticSecret::random_from_rng(OsRng).to_bytes())
    }

    pub fn from_secret(bytes: [u8; 32]) -> Self {
        let secret = StaticSecret::from(bytes);
        let public = PublicKey::from(&secret);
        Self { secret, public }
    }

    pub fn public(&self) -> PublicKeyBytes {
        self.public.to_bytes()
    }

    pub fn public_hex(&self) -> String {
        hex::encode(self.public())
    }

    pub fn dh(&self, peer: &PublicKeyBytes) -> [u8; 32] {
        self.secret.diffie_hellman(&PublicKey::from(*peer)).to_bytes()
    }

    /// Reads a key file holding the hex secret on its first line.
    pub fn load(path: &Path) -> Result<Self, NetError> {
        let text = fs::read_to_string(path).map_err(|e| NetError::Key(format!("{}: {e}", path.display())))?;
        let bytes = parse_key(text.lines().next().unwrap_or(""))?;
        Ok(Self::from_secret(bytes))
    }

    /// Writes the secret and, on a second line, the public key.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let text = format!("{}\n{}\n", hex::encode(self.secret.to_bytes()), self.public_hex());
        fs::write(path, text)?;
        Ok(())
    }
}

impl std::fmt::Debug for Identity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Identity").field("public", &self.public_hex()).finish_non_exhaustive()
    }
}

/// Parses 32 hex-encoded bytes.
pub fn parse_key(text: &str) -> Result<[u8; 32], NetError> {
    let bytes = hex::decode(text.trim()).map_err(|e| NetError::Key(e.to_string()))?;
    bytes.try_into().map_err(|b: Vec<u8>| NetError::Key(format!("expected 32 bytes, got {}", b.len())))
}

/// Reads a public key from a file; the last non-empty line is used, so key
/// files written by [`Identity::save`] are accepted as well.
pub fn load_public(path: &Path) -> Result<PublicKeyBytes, NetError> {
    let text = fs::read_to_string(path).map_err(|e| NetError::Key(format!("{}: {e}", path.display())))?;
    parse_key(text.lines().rfind(|l| !l.trim().is_empty()).unwrap_or(""))
}
