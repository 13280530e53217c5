//! One-time session keys between the user and the cloud server.
//!
//! The user draws `k` from OS entropy and encapsulates it to the cloud's static
//! X25519 key: an ephemeral key `e` gives `kek = HKDF(DH(e, S_c))`, and `k` is
//! sealed under `kek` with ChaCha20-Poly1305. The encapsulation is
//! `session (16) | e_pub (32) | sealed k (48)`. The cloud answers with
//! `HMAC(k, "confirm" | session)`.
//!
//! Messages under `k` carry an explicit 64-bit counter; the 96-bit nonce is the
//! direction word followed by the counter, and receivers accept only the next
//! counter value.

use std::collections::HashSet;
use std::sync::Mutex;

use chacha20poly1305::aead::{Aead, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, KeyInit, Nonce};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use privinfer_core::transport::{constant_time_eq, SessionId};
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::Sha256;

use crate::identity::{Identity, PublicKeyBytes};
use crate::NetError;

pub const ENCAPSULATION_LEN: usize = 16 + 32 + 32 + 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    UserToCloud = 0,
    CloudToUser = 1,
}

pub struct SessionKey {
    key: [u8; 32],
    pub id: SessionId,
    send_dir: Direction,
    send_ctr: u64,
    recv_ctr: u64,
}

impl std::fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionKey").field("id", &hex::encode(self.id)).finish_non_exhaustive()
    }
}

fn nonce(dir: Direction, ctr: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[..4].copy_from_slice(&(dir as u32).to_be_bytes());
    n[4..].copy_from_slice(&ctr.to_be_bytes());
    n
}

impl SessionKey {
    fn new(key: [u8; 32], id: SessionId, send_dir: Direction) -> Self {
        Self { key, id, send_dir, send_ctr: 0, recv_ctr: 0 }
    }

    fn recv_dir(&self) -> Direction {
        match self.send_dir {
            Direction::UserToCloud => Direction::CloudToUser,
            Direction::CloudToUser => Direction::UserToCloud,
        }
    }

    fn cipher(&self) -> ChaCha20Poly1305 {
        ChaCha20Poly1305::new(Key::from_slice(&self.key))
    }

    fn aad(&self, label: &[u8]) -> Vec<u8> {
        [&self.id[..], label].concat()
    }

    /// Encrypts `plaintext`; the output is `counter (8) | ciphertext`.
    pub fn seal(&mut self, label: &[u8], plaintext: &[u8]) -> Vec<u8> {
        let ctr = self.send_ctr;
        self.send_ctr += 1;
        let aad = self.aad(label);
        let ct = self
            .cipher()
            .encrypt(Nonce::from_slice(&nonce(self.send_dir, ctr)), Payload { msg: plaintext, aad: &aad })
            .expect("chacha20poly1305 encryption");
        [&ctr.to_be_bytes()[..], &ct].concat()
    }

    pub fn open(&mut self, label: &[u8], sealed: &[u8]) -> Result<Vec<u8>, NetError> {
        if sealed.len() < 8 + 16 {
            return Err(NetError::Aead);
        }
        let ctr = u64::from_be_bytes(sealed[..8].try_into().unwrap());
        if ctr != self.recv_ctr {
            return Err(NetError::Replay);
        }
        let aad = self.aad(label);
        let pt = self
            .cipher()
            .decrypt(Nonce::from_slice(&nonce(self.recv_dir(), ctr)), Payload { msg: &sealed[8..], aad: &aad })
            .map_err(|_| NetError::Aead)?;
        self.recv_ctr += 1;
        Ok(pt)
    }

    pub fn confirmation(&self) -> [u8; 32] {
        let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&self.key).expect("hmac key");
        mac.update(b"confirm");
        mac.update(&self.id);
        mac.finalize().into_bytes().into()
    }

    pub fn check_confirmation(&self, tag: &[u8]) -> Result<(), NetError> {
        if constant_time_eq(&self.confirmation(), tag) {
            Ok(())
        } else {
            Err(NetError::Confirmation)
        }
    }
}

fn kek(shared: &[u8; 32], session: &SessionId, epk: &PublicKeyBytes, cloud: &PublicKeyBytes) -> [u8; 32] {
    let hk = Hkdf::<Sha256>::new(Some(session), shared);
    let mut out = [0u8; 32];
    hk.expand(&[&b"privinfer session kem"[..], epk, cloud].concat(), &mut out).expect("hkdf length");
    out
}

/// User side: draws a fresh session key for `cloud`.
pub fn encapsulate(cloud: &PublicKeyBytes) -> (SessionKey, Vec<u8>) {
    let mut k = [0u8; 32];
    let mut id = [0u8; 16];
    OsRng.fill_bytes(&mut k);
    OsRng.fill_bytes(&mut id);
    let eph = Identity::generate();
    let epk = eph.public();
    let kek = kek(&eph.dh(cloud), &id, &epk, cloud);
    let aad = [&id[..], &epk].concat();
    let sealed = ChaCha20Poly1305::new(Key::from_slice(&kek))
        .encrypt(Nonce::from_slice(&[0u8; 12]), Payload { msg: &k, aad: &aad })
        .expect("chacha20poly1305 encryption");
    let enc = [&id[..], &epk, &sealed].concat();
    (SessionKey::new(k, id, Direction::UserToCloud), enc)
}

/// Cloud side: recovers the session key. Callers check freshness with a
/// [`ReplayGuard`] before answering.
pub fn decapsulate(id: &Identity, enc: &[u8]) -> Result<SessionKey, NetError> {
    if enc.len() != ENCAPSULATION_LEN {
        return Err(NetError::Aead);
    }
    let session: SessionId = enc[..16].try_into().unwrap();
    let epk: PublicKeyBytes = enc[16..48].try_into().unwrap();
    let kek = kek(&id.dh(&epk), &session, &epk, &id.public());
    let aad = [&session[..], &epk].concat();
    let k = ChaCha20Poly1305::new(Key::from_slice(&kek))
        .decrypt(Nonce::from_slice(&[0u8; 12]), Payload { msg: &enc[48..], aad: &aad })
        .map_err(|_| NetError::Aead)?;
    Ok(SessionKey::new(k.try_into().map_err(|_| NetError::Aead)?, session, Direction::CloudToUser))
}

/// Remembers every session id and ephemeral key the cloud has accepted.
#[derive(Default)]
pub struct ReplayGuard {
    seen: Mutex<(HashSet<[u8; 16]>, HashSet<[u8; 32]>)>,
}

impl ReplayGuard {
    /// Records the encapsulation's session id and ephemeral key, refusing
    /// either one if it was seen before.
    pub fn check(&self, enc: &[u8]) -> Result<(), NetError> {
        if enc.len() < 48 {
            return Err(NetError::Aead);
        }
        let id: [u8; 16] = enc[..16].try_into().unwrap();
        let epk: [u8; 32] = enc[16..48].try_into().unwrap();
        let mut seen = self.seen.lock().unwrap();
        if seen.0.contains(&id) || seen.1.contains(&epk) {
            return Err(NetError::Replay);
        }
        seen.0.insert(id);
        seen.1.insert(epk);
        Ok(())
    }
}
