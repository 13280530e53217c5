//! Authenticated TCP channels.
//!
//! Both ends hold static X25519 keys and know the key they expect from the
//! other side. The handshake is two frames:
//!
//! 1. initiator -> responder `HandshakeInit`: version | e_i | s_i | nonce_i (16)
//! 2. responder -> initiator `HandshakeResp`: e_r | s_r | nonce_r (16) | confirm (32)
//!
//! The channel key is HKDF-SHA256 over DH(e_i, e_r) | DH(s_i, e_r) | DH(e_i, s_r),
//! salted with the transcript hash. `confirm` is an HMAC over the transcript
//! under a second derived key, so only the holder of `s_r` can produce it; a
//! party that does not hold `s_i` cannot derive the frame keys. The session id
//! is the first 16 bytes of the transcript hash. Handshake frames are framed
//! under a fixed public key and only protect against accidental corruption.

use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use privinfer_core::transport::{
    constant_time_eq, derive_direction_key, ByteCounters, CountingStream, FramedChannel, SessionId, Tag, Transport,
    TransportError,
};
use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};

use crate::identity::{Identity, PublicKeyBytes};
use crate::NetError;

const VERSION: u8 = 1;
const INIT_LEN: usize = 1 + 32 + 32 + 16;
const RESP_LEN: usize = 32 + 32 + 16 + 32;
const PREAUTH_KEY: [u8; 32] = *b"privinfer handshake framing key!";

pub type Stream = CountingStream<TcpStream>;

/// An authenticated connection with its raw byte counters.
pub struct Connection {
    pub chan: FramedChannel<Stream>,
    pub peer: PublicKeyBytes,
    pub wire: ByteCounters,
    pub peer_addr: Option<SocketAddr>,
}

impl Connection {
    pub fn session(&self) -> SessionId {
        self.chan.session_id()
    }
}

pub fn listen(addr: &str) -> Result<TcpListener, NetError> {
    TcpListener::bind(addr).map_err(|source| NetError::Bind { addr: addr.to_string(), source })
}

/// Connects with retries until `timeout` elapses, then runs the initiator side
/// of the handshake. `timeout` also bounds every later socket read.
pub fn connect(addr: &str, id: &Identity, expected: &PublicKeyBytes, timeout: Duration) -> Result<Connection, NetError> {
    let deadline = Instant::now() + timeout;
    let stream = loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(NetError::ConnectTimeout(addr.to_string()));
        }
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        match addrs.iter().find_map(|a| TcpStream::connect_timeout(a, left).ok()) {
            Some(s) => break s,
            None => thread::sleep(Duration::from_millis(50).min(left)),
        }
    };
    initiate(stream, id, expected, timeout)
}

fn configure(stream: &TcpStream, timeout: Duration) -> Result<(), NetError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    Ok(())
}

fn preauth(stream: TcpStream) -> (FramedChannel<Stream>, ByteCounters) {
    let (stream, wire) = CountingStream::new(stream);
    (FramedChannel::new(stream, [0; 16], PREAUTH_KEY, PREAUTH_KEY), wire)
}

struct Keys {
    session: SessionId,
    key: [u8; 32],
    confirm: [u8; 32],
}

fn derive(init: &[u8], resp_head: &[u8], dh: [[u8; 32]; 3]) -> Keys {
    let mut h = Sha256::new();
    h.update(b"privinfer-hs-v1");
    h.update(init);
    h.update(resp_head);
    let th: [u8; 32] = h.finalize().into();
    let ikm: Vec<u8> = dh.concat();
    let hk = Hkdf::<Sha256>::new(Some(&th), &ikm);
    let mut key = [0u8; 32];
    let mut confirm_key = [0u8; 32];
    hk.expand(b"channel key", &mut key).expect("hkdf length");
    hk.expand(b"confirm key", &mut confirm_key).expect("hkdf length");
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&confirm_key).expect("hmac key");
    mac.update(b"responder");
    mac.update(&th);
    let mut session = [0u8; 16];
    session.copy_from_slice(&th[..16]);
    Keys { session, key, confirm: mac.finalize().into_bytes().into() }
}

fn install(chan: &mut FramedChannel<Stream>, keys: &Keys, initiator: bool) {
    let to_resp = derive_direction_key(&keys.key, b"initiator->responder");
    let to_init = derive_direction_key(&keys.key, b"responder->initiator");
    if initiator {
        chan.rekey(keys.session, to_resp, to_init);
    } else {
        chan.rekey(keys.session, to_init, to_resp);
    }
}

fn initiate(stream: TcpStream, id: &Identity, expected: &PublicKeyBytes, timeout: Duration) -> Result<Connection, NetError> {
    configure(&stream, timeout)?;
    let peer_addr = stream.peer_addr().ok();
    let (mut chan, wire) = preauth(stream);
    let eph = Identity::generate();
    let mut init = Vec::with_capacity(INIT_LEN);
    init.push(VERSION);
    init.extend_from_slice(&eph.public());
    init.extend_from_slice(&id.public());
    let mut nonce = [0u8; 16];
    OsRng.fill_bytes(&mut nonce);
    init.extend_from_slice(&nonce);
    chan.send(Tag::HandshakeInit, &init)?;
    let resp = chan.recv(Tag::HandshakeResp).map_err(|e| match e {
        TransportError::PeerAborted(reason) => NetError::Auth(reason),
        e => e.into(),
    })?;
    if resp.len() != RESP_LEN {
        return Err(NetError::Auth("malformed handshake response".into()));
    }
    let e_r: [u8; 32] = resp[..32].try_into().unwrap();
    let s_r: [u8; 32] = resp[32..64].try_into().unwrap();
    if !constant_time_eq(&s_r, expected) {
        return Err(NetError::Auth(format!("peer presented key {}", hex::encode(s_r))));
    }
    let keys = derive(&init, &resp[..80], [eph.dh(&e_r), id.dh(&e_r), eph.dh(&s_r)]);
    if !constant_time_eq(&keys.confirm, &resp[80..]) {
        return Err(NetError::Auth("handshake confirmation mismatch".into()));
    }
    install(&mut chan, &keys, true);
    Ok(Connection { chan, peer: s_r, wire, peer_addr })
}

/// Responder side of the handshake. With `allowed` set, initiators presenting
/// any other static key are refused.
pub fn accept(stream: TcpStream, id: &Identity, allowed: Option<&[PublicKeyBytes]>, timeout: Duration) -> Result<Connection, NetError> {
    configure(&stream, timeout)?;
    let peer_addr = stream.peer_addr().ok();
    let (mut chan, wire) = preauth(stream);
    let init = chan.recv(Tag::HandshakeInit)?;
    if init.len() != INIT_LEN || init[0] != VERSION {
        return Err(NetError::Auth("malformed handshake".into()));
    }
    let e_i: [u8; 32] = init[1..33].try_into().unwrap();
    let s_i: [u8; 32] = init[33..65].try_into().unwrap();
    if let Some(list) = allowed {
        if !list.iter().any(|k| constant_time_eq(k, &s_i)) {
            chan.abort("unknown peer key");
            return Err(NetError::Auth(format!("unknown peer key {}", hex::encode(s_i))));
        }
    }
    let eph = Identity::generate();
    let mut resp = Vec::with_capacity(RESP_LEN);
    resp.extend_from_slice(&eph.public());
    resp.extend_from_slice(&id.public());
    let mut nonce = [0u8; 16];
    OsRng.fill_bytes(&mut nonce);
    resp.extend_from_slice(&nonce);
    let keys = derive(&init, &resp, [eph.dh(&e_i), eph.dh(&s_i), id.dh(&e_i)]);
    resp.extend_from_slice(&keys.confirm);
    chan.send(Tag::HandshakeResp, &resp)?;
    install(&mut chan, &keys, false);
    Ok(Connection { chan, peer: s_i, wire, peer_addr })
}
