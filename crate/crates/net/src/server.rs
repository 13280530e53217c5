//! Model-server and cloud-server daemons.

use std::collections::HashMap;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use privinfer_core::model::ModelSpec;
use privinfer_core::ot::OtKind;
use privinfer_core::runtime::{run_cloud, run_owner, SessionOptions};
use privinfer_core::sharing::{ArithShare, PartyId};
use privinfer_core::transport::{CommStats, SessionId, Transport};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::channel::{accept, connect, Connection};
use crate::control::{decode_hex, recv_json, send_json, Reply, Request};
use crate::identity::{parse_key, Identity, PublicKeyBytes};
use crate::session::{decapsulate, ReplayGuard, SessionKey};
use crate::NetError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub identity: Arc<Identity>,
    pub opts: SessionOptions,
    /// Connect, handshake and per-read bound.
    pub timeout: Duration,
    /// Longest time a user request may wait for its inference.
    pub session_timeout: Duration,
}

impl ServerConfig {
    pub fn new(identity: Identity, opts: SessionOptions) -> Self {
        Self { identity: Arc::new(identity), opts, timeout: Duration::from_secs(30), session_timeout: Duration::from_secs(600) }
    }
}

/// Totals over the daemon's lifetime, dumped on shutdown.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ServerStats {
    pub sessions_ok: u64,
    pub sessions_failed: u64,
    pub protocol_bytes_sent: u64,
    pub protocol_bytes_received: u64,
    pub protocol_seconds: f64,
}

impl ServerStats {
    fn record(&mut self, r: Option<&CommStats>) {
        match r {
            Some(s) => {
                self.sessions_ok += 1;
                self.protocol_bytes_sent += s.total_sent();
                self.protocol_bytes_received += s.total_received();
                self.protocol_seconds += s.elapsed().as_secs_f64();
            }
            None => self.sessions_failed += 1,
        }
    }
}

/// A daemon handling one accepted TCP connection at a time per thread.
pub trait Service: Send + Sync + 'static {
    fn name(&self) -> &'static str;
    fn handle(&self, stream: TcpStream) -> Result<(), NetError>;
    fn stats(&self) -> ServerStats;
}

/// Accepts connections until `shutdown` is set, one thread per connection, then
/// waits for the connections in flight.
pub fn serve(listener: TcpListener, service: Arc<dyn Service>, shutdown: Arc<AtomicBool>) -> Result<ServerStats, NetError> {
    listener.set_nonblocking(true)?;
    info!(service = service.name(), addr = ?listener.local_addr().ok(), "listening");
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                let svc = Arc::clone(&service);
                workers.push(thread::spawn(move || {
                    if let Err(e) = svc.handle(stream) {
                        warn!(service = svc.name(), %peer, error = %e, "connection failed");
                    }
                }));
                workers.retain(|w| !w.is_finished());
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(e.into()),
        }
    }
    info!(service = service.name(), in_flight = workers.len(), "shutting down");
    for w in workers {
        let _ = w.join();
    }
    Ok(service.stats())
}

/// Fills in a per-session dealer seed when none is configured: both ends
/// derive it from the channel session id, so the dealer stays consistent.
fn session_opts(base: &SessionOptions, session: SessionId) -> SessionOptions {
    let mut o = base.clone();
    if o.ot == OtKind::Dealer && o.seed.is_none() {
        let d = Sha256::new().chain_update(b"privinfer dealer seed").chain_update(session).finalize();
        o.seed = Some(u64::from_le_bytes(d[..8].try_into().unwrap()));
    }
    o
}

fn reply_error(conn: &mut Connection, e: &NetError) {
    let _ = send_json(&mut conn.chan, &Reply::Error { kind: e.kind().into(), message: e.to_string() });
}

pub struct ModelServer {
    cfg: ServerConfig,
    model: ModelSpec,
    cloud_endpoint: String,
    cloud_key: PublicKeyBytes,
    stats: Mutex<ServerStats>,
}

impl ModelServer {
    pub fn new(cfg: ServerConfig, model: ModelSpec, cloud_endpoint: String, cloud_key: PublicKeyBytes) -> Self {
        Self { cfg, model, cloud_endpoint, cloud_key, stats: Mutex::default() }
    }

    fn infer(&self, session: &str, share: &str, cloud_key: Option<&str>) -> Result<(ArithShare, CommStats), NetError> {
        if let Some(k) = cloud_key {
            if parse_key(k)? != self.cloud_key {
                return Err(NetError::Protocol("route plan names a different cloud server".into()));
            }
        }
        let share = ArithShare::from_bytes(&decode_hex("share", share)?)?;
        if share.party() != PartyId::Zero {
            return Err(NetError::Protocol("model server expects the party-0 share".into()));
        }
        self.model.batch_of(share.shape())?;
        let mut peer = connect(&self.cloud_endpoint, &self.cfg.identity, &self.cloud_key, self.cfg.timeout)?;
        send_json(&mut peer.chan, &Request::Join { session: session.to_string() })?;
        let opts = session_opts(&self.cfg.opts, peer.session());
        let out = run_owner(Box::new(peer.chan), &self.model, &share, &opts)?;
        info!(session, bytes = out.stats.total_bytes(), secs = out.elapsed.as_secs_f64(), "inference done");
        Ok((out.share, out.stats))
    }
}

impl Service for ModelServer {
    fn name(&self) -> &'static str {
        "model-server"
    }

    fn handle(&self, stream: TcpStream) -> Result<(), NetError> {
        let mut conn = accept(stream, &self.cfg.identity, None, self.cfg.timeout)?;
        let req: Request = recv_json(&mut conn.chan)?;
        let Request::Infer { session, share, cloud_key, .. } = req else {
            let e = NetError::Protocol("model server only serves infer".into());
            reply_error(&mut conn, &e);
            return Err(e);
        };
        let result = self.infer(&session, &share, cloud_key.as_deref());
        self.stats.lock().unwrap().record(result.as_ref().ok().map(|r| &r.1));
        match result {
            Ok((share, stats)) => send_json(&mut conn.chan, &Reply::Result { share: hex::encode(share.to_bytes()), stats }),
            Err(e) => {
                reply_error(&mut conn, &e);
                Err(e)
            }
        }
    }

    fn stats(&self) -> ServerStats {
        self.stats.lock().unwrap().clone()
    }
}

/// Deliberate faults for exercising the user's abort paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Fault {
    #[default]
    None,
    /// Flip one bit of the sealed result share.
    CorruptResult,
}

type Outcome = Result<(ArithShare, CommStats), (String, String)>;

struct Pending {
    share: ArithShare,
    done: mpsc::Sender<Outcome>,
}

pub struct CloudServer {
    cfg: ServerConfig,
    allowed_models: Option<Vec<PublicKeyBytes>>,
    pending: Mutex<HashMap<String, Pending>>,
    arrived: Condvar,
    replay: ReplayGuard,
    stats: Mutex<ServerStats>,
    pub fault: Fault,
}

impl CloudServer {
    /// With `allowed_models` set, only those static keys may join sessions.
    pub fn new(cfg: ServerConfig, allowed_models: Option<Vec<PublicKeyBytes>>) -> Self {
        Self {
            cfg,
            allowed_models,
            pending: Mutex::default(),
            arrived: Condvar::new(),
            replay: ReplayGuard::default(),
            stats: Mutex::default(),
            fault: Fault::None,
        }
    }

    fn establish(&self, conn: &mut Connection, encapsulation: &str) -> Result<SessionKey, NetError> {
        let enc = decode_hex("encapsulation", encapsulation)?;
        let key = decapsulate(&self.cfg.identity, &enc)?;
        self.replay.check(&enc)?;
        send_json(&mut conn.chan, &Reply::Confirm { mac: hex::encode(key.confirmation()) })?;
        Ok(key)
    }

    fn user_session(&self, conn: &mut Connection, encapsulation: &str) -> Result<(), NetError> {
        let mut key = self.establish(conn, encapsulation)?;
        let Request::Infer { session, share, .. } = recv_json(&mut conn.chan)? else {
            return Err(NetError::Protocol("expected infer after establish".into()));
        };
        if session != hex::encode(key.id) {
            return Err(NetError::Protocol("infer names another session".into()));
        }
        let share = ArithShare::from_bytes(&key.open(b"x1", &decode_hex("share", &share)?)?)?;
        if share.party() != PartyId::One {
            return Err(NetError::Protocol("cloud expects the party-1 share".into()));
        }
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(session.clone(), Pending { share, done: tx });
        self.arrived.notify_all();
        send_json(&mut conn.chan, &Reply::Accepted)?;
        let outcome = match rx.recv_timeout(self.cfg.session_timeout) {
            Ok(o) => o,
            Err(_) => {
                self.pending.lock().unwrap().remove(&session);
                Err(("timeout".into(), "model server never joined".into()))
            }
        };
        match outcome {
            Ok((res, stats)) => {
                let mut sealed = key.seal(b"res1", &res.to_bytes());
                if self.fault == Fault::CorruptResult {
                    let i = sealed.len() / 2;
                    sealed[i] ^= 0x01;
                }
                send_json(&mut conn.chan, &Reply::Result { share: hex::encode(sealed), stats })
            }
            Err((kind, message)) => send_json(&mut conn.chan, &Reply::Error { kind, message }),
        }
    }

    fn take_pending(&self, session: &str) -> Option<Pending> {
        let deadline = Instant::now() + self.cfg.timeout;
        let mut map = self.pending.lock().unwrap();
        loop {
            if let Some(p) = map.remove(session) {
                return Some(p);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return None;
            }
            map = self.arrived.wait_timeout(map, left).unwrap().0;
        }
    }

    fn join(&self, mut conn: Connection, session: &str) -> Result<(), NetError> {
        if let Some(list) = &self.allowed_models {
            if !list.contains(&conn.peer) {
                conn.chan.abort("model server not allowed");
                return Err(NetError::Auth("model server key not allowed".into()));
            }
        }
        let Some(p) = self.take_pending(session) else {
            conn.chan.abort("unknown session");
            return Err(NetError::Protocol(format!("join for unknown session {session}")));
        };
        let opts = session_opts(&self.cfg.opts, conn.session());
        let result = run_cloud(Box::new(conn.chan), &p.share, &opts).map_err(NetError::from);
        self.stats.lock().unwrap().record(result.as_ref().ok().map(|o| &o.stats));
        let _ = p.done.send(match &result {
            Ok(o) => Ok((o.share.clone(), o.stats.clone())),
            Err(e) => Err((e.kind().into(), e.to_string())),
        });
        result.map(|o| info!(session, bytes = o.stats.total_bytes(), "inference done"))
    }
}

impl Service for CloudServer {
    fn name(&self) -> &'static str {
        "cloud-server"
    }

    fn handle(&self, stream: TcpStream) -> Result<(), NetError> {
        let mut conn = accept(stream, &self.cfg.identity, None, self.cfg.timeout)?;
        match recv_json(&mut conn.chan)? {
            Request::Establish { encapsulation } => {
                let r = self.user_session(&mut conn, &encapsulation);
                if let Err(e) = &r {
                    reply_error(&mut conn, e);
                }
                r
            }
            Request::Join { session } => self.join(conn, &session),
            Request::Infer { .. } => {
                let e = NetError::Protocol("establish a session key first".into());
                reply_error(&mut conn, &e);
                Err(e)
            }
        }
    }

    fn stats(&self) -> ServerStats {
        self.stats.lock().unwrap().clone()
    }
}
