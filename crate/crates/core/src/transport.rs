//! Framed, MAC-protected message transport between the two computing parties,
//! with per-scope communication accounting.
//!
//! Wire layout of one frame (all integers little-endian):
//!
//! ```text
//! tag: u8 | session id: [u8; 16] | payload length: u32 | payload | mac: [u8; 32]
//! ```
//!
//! The MAC is HMAC-SHA256 over `(direction sequence number: u64, tag, session id, payload)`
//! under the per-session key agreed during the channel handshake.

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

pub const SESSION_ID_LEN: usize = 16;
pub const MAC_LEN: usize = 32;
pub const HEADER_LEN: usize = 1 + SESSION_ID_LEN + 4;
/// Upper bound on a single payload; larger frames are treated as corruption.
pub const MAX_PAYLOAD: usize = 1 << 30;

pub type SessionId = [u8; SESSION_ID_LEN];

/// Message-type tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tag {
    HandshakeInit = 0x01,
    HandshakeResp = 0x02,
    SessionInit = 0x03,
    HePublicKey = 0x04,
    Control = 0x05,
    Abort = 0x06,
    OtSetup = 0x10,
    OtExtend = 0x11,
    OtCorrection = 0x12,
    Cmp = 0x20,
    Mux = 0x21,
    Div = 0x22,
    Trip = 0x23,
    Mult = 0x24,
    LinCt = 0x30,
    LinResult = 0x31,
    Relu = 0x32,
    Pool = 0x33,
}

impl Tag {
    pub fn from_u8(b: u8) -> Option<Tag> {
        use Tag::*;
        Some(match b {
            0x01 => HandshakeInit,
            0x02 => HandshakeResp,
            0x03 => SessionInit,
            0x04 => HePublicKey,
            0x05 => Control,
            0x06 => Abort,
            0x10 => OtSetup,
            0x11 => OtExtend,
            0x12 => OtCorrection,
            0x20 => Cmp,
            0x21 => Mux,
            0x22 => Div,
            0x23 => Trip,
            0x24 => Mult,
            0x30 => LinCt,
            0x31 => LinResult,
            0x32 => Relu,
            0x33 => Pool,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("peer closed the connection")]
    Closed,
    #[error("unknown frame tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("protocol desync: expected {expected:?}, received {got:?}")]
    Desync { expected: Tag, got: Tag },
    #[error("frame authentication failed")]
    BadMac,
    #[error("frame belongs to another session")]
    WrongSession,
    #[error("frame payload too large ({0} bytes)")]
    Oversized(usize),
    #[error("peer aborted the session: {0}")]
    PeerAborted(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("authentication failure: {0}")]
    Auth(String),
}

impl TransportError {
    pub fn malformed(what: impl Into<String>) -> Self {
        TransportError::Malformed(what.into())
    }
}

/// Byte and round counters for one accounting scope (a layer, or session setup).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeStats {
    pub name: String,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub rounds: u64,
    #[serde(with = "duration_secs")]
    pub elapsed: Duration,
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_secs_f64(f64::deserialize(d)?))
    }
}

/// Communication statistics, grouped by scope in the order scopes were opened.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommStats {
    pub scopes: Vec<ScopeStats>,
}

impl CommStats {
    pub fn total_sent(&self) -> u64 {
        self.scopes.iter().map(|s| s.bytes_sent).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.scopes.iter().map(|s| s.bytes_received).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_sent() + self.total_received()
    }

    pub fn total_rounds(&self) -> u64 {
        self.scopes.iter().map(|s| s.rounds).sum()
    }

    pub fn scope(&self, name: &str) -> Option<&ScopeStats> {
        self.scopes.iter().find(|s| s.name == name)
    }

    pub fn elapsed(&self) -> Duration {
        self.scopes.iter().map(|s| s.elapsed).sum()
    }
}

#[derive(Debug)]
struct StatsRecorder {
    stats: CommStats,
    current: usize,
    opened: Instant,
    last_was_send: bool,
}

impl StatsRecorder {
    fn new() -> Self {
        Self {
            stats: CommStats { scopes: vec![ScopeStats { name: "session".into(), ..Default::default() }] },
            current: 0,
            opened: Instant::now(),
            last_was_send: false,
        }
    }

    fn close_current(&mut self) {
        let now = Instant::now();
        self.stats.scopes[self.current].elapsed += now - self.opened;
        self.opened = now;
    }

    fn set_scope(&mut self, name: &str) {
        self.close_current();
        if let Some(i) = self.stats.scopes.iter().position(|s| s.name == name) {
            self.current = i;
        } else {
            self.stats.scopes.push(ScopeStats { name: name.to_string(), ..Default::default() });
            self.current = self.stats.scopes.len() - 1;
        }
    }

    fn on_send(&mut self, bytes: usize) {
        let s = &mut self.stats.scopes[self.current];
        s.bytes_sent += bytes as u64;
        s.frames_sent += 1;
        self.last_was_send = true;
    }

    fn on_recv(&mut self, bytes: usize) {
        let s = &mut self.stats.scopes[self.current];
        s.bytes_received += bytes as u64;
        s.frames_received += 1;
        if self.last_was_send {
            s.rounds += 1;
        }
        self.last_was_send = false;
    }

    fn snapshot(&self) -> CommStats {
        let mut out = self.stats.clone();
        out.scopes[self.current].elapsed += self.opened.elapsed();
        out
    }
}

/// A bidirectional, ordered, authenticated message channel.
pub trait Transport: Send {
    fn send(&mut self, tag: Tag, payload: &[u8]) -> Result<(), TransportError>;

    /// Receives the next frame, which must carry `expected`.
    fn recv(&mut self, expected: Tag) -> Result<Vec<u8>, TransportError>;

    fn session_id(&self) -> SessionId;

    /// Charges subsequent traffic to the named scope.
    fn set_scope(&mut self, name: &str);

    fn stats(&self) -> CommStats;

    /// Best-effort notification that this side is abandoning the session.
    fn abort(&mut self, reason: &str);
}

type HmacSha256 = Hmac<Sha256>;

pub fn frame_mac(key: &[u8; 32], seq: u64, tag: u8, session: &SessionId, payload: &[u8]) -> [u8; MAC_LEN] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac accepts any key length");
    mac.update(&seq.to_le_bytes());
    mac.update(&[tag]);
    mac.update(session);
    mac.update(payload);
    mac.finalize().into_bytes().into()
}

/// Encodes one frame. Exposed for tests that inspect the wire format.
pub fn encode_frame(key: &[u8; 32], seq: u64, tag: Tag, session: &SessionId, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + MAC_LEN);
    out.push(tag as u8);
    out.extend_from_slice(session);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&frame_mac(key, seq, tag as u8, session, payload));
    out
}

/// [`Transport`] over any duplex byte stream.
pub struct FramedChannel<S> {
    stream: S,
    session: SessionId,
    send_key: [u8; 32],
    recv_key: [u8; 32],
    send_seq: u64,
    recv_seq: u64,
    recorder: StatsRecorder,
    poisoned: bool,
}

impl<S: Read + Write + Send> FramedChannel<S> {
    /// `send_key`/`recv_key` are direction-separated MAC keys; the peer uses them swapped.
    pub fn new(stream: S, session: SessionId, send_key: [u8; 32], recv_key: [u8; 32]) -> Self {
        Self { stream, session, send_key, recv_key, send_seq: 0, recv_seq: 0, recorder: StatsRecorder::new(), poisoned: false }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    pub fn get_mut(&mut self) -> &mut S {
        &mut self.stream
    }

    /// Replaces MAC keys after a handshake; sequence numbers restart.
    pub fn rekey(&mut self, session: SessionId, send_key: [u8; 32], recv_key: [u8; 32]) {
        self.session = session;
        self.send_key = send_key;
        self.recv_key = recv_key;
        self.send_seq = 0;
        self.recv_seq = 0;
    }

    fn read_frame(&mut self) -> Result<(Tag, Vec<u8>), TransportError> {
        let mut header = [0u8; HEADER_LEN];
        read_exact_mapped(&mut self.stream, &mut header)?;
        let tag_byte = header[0];
        let tag = Tag::from_u8(tag_byte);
        let mut session = [0u8; SESSION_ID_LEN];
        session.copy_from_slice(&header[1..1 + SESSION_ID_LEN]);
        let len = u32::from_le_bytes(header[1 + SESSION_ID_LEN..].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(TransportError::Oversized(len));
        }
        let mut body = vec![0u8; len + MAC_LEN];
        read_exact_mapped(&mut self.stream, &mut body)?;
        self.recorder.on_recv(HEADER_LEN + body.len());
        let mac = body.split_off(len);
        let expected = frame_mac(&self.recv_key, self.recv_seq, tag_byte, &session, &body);
        if !constant_time_eq(&mac, &expected) {
            return Err(TransportError::BadMac);
        }
        self.recv_seq += 1;
        let tag = tag.ok_or(TransportError::UnknownTag(tag_byte))?;
        if session != self.session {
            return Err(TransportError::WrongSession);
        }
        Ok((tag, body))
    }
}

fn read_exact_mapped<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), TransportError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TransportError::Closed,
        io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => TransportError::Timeout,
        _ => TransportError::Io(e),
    })
}

pub fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

impl<S: Read + Write + Send> Transport for FramedChannel<S> {
    fn send(&mut self, tag: Tag, payload: &[u8]) -> Result<(), TransportError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(TransportError::Oversized(payload.len()));
        }
        let frame = encode_frame(&self.send_key, self.send_seq, tag, &self.session, payload);
        self.send_seq += 1;
        self.stream.write_all(&frame)?;
        self.stream.flush()?;
        self.recorder.on_send(frame.len());
        Ok(())
    }

    fn recv(&mut self, expected: Tag) -> Result<Vec<u8>, TransportError> {
        if self.poisoned {
            return Err(TransportError::Closed);
        }
        let result = self.read_frame();
        match result {
            Ok((Tag::Abort, payload)) => {
                self.poisoned = true;
                Err(TransportError::PeerAborted(String::from_utf8_lossy(&payload).into_owned()))
            }
            Ok((tag, payload)) if tag == expected => Ok(payload),
            Ok((got, _)) => {
                self.poisoned = true;
                Err(TransportError::Desync { expected, got })
            }
            Err(e) => {
                self.poisoned = true;
                Err(e)
            }
        }
    }

    fn session_id(&self) -> SessionId {
        self.session
    }

    fn set_scope(&mut self, name: &str) {
        self.recorder.set_scope(name);
    }

    fn stats(&self) -> CommStats {
        self.recorder.snapshot()
    }

    fn abort(&mut self, reason: &str) {
        let _ = self.send(Tag::Abort, reason.as_bytes());
    }
}

/// One end of an in-memory duplex byte pipe.
pub struct MemPipe {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
    timeout: Duration,
}

impl MemPipe {
    pub fn pair(timeout: Duration) -> (MemPipe, MemPipe) {
        let (tx_a, rx_b) = mpsc::channel();
        let (tx_b, rx_a) = mpsc::channel();
        (
            MemPipe { tx: tx_a, rx: rx_a, pending: Vec::new(), pos: 0, timeout },
            MemPipe { tx: tx_b, rx: rx_b, pending: Vec::new(), pos: 0, timeout },
        )
    }
}

impl Read for MemPipe {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.pending.len() {
            match self.rx.recv_timeout(self.timeout) {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(RecvTimeoutError::Timeout) => return Err(io::ErrorKind::TimedOut.into()),
                Err(RecvTimeoutError::Disconnected) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for MemPipe {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx.send(buf.to_vec()).map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Connected pair of in-memory framed channels sharing a fixed session and key.
pub fn memory_channel_pair(session: SessionId, key: [u8; 32]) -> (FramedChannel<MemPipe>, FramedChannel<MemPipe>) {
    let (a, b) = MemPipe::pair(Duration::from_secs(30));
    let k01 = derive_direction_key(&key, b"0->1");
    let k10 = derive_direction_key(&key, b"1->0");
    (FramedChannel::new(a, session, k01, k10), FramedChannel::new(b, session, k10, k01))
}

pub fn derive_direction_key(key: &[u8; 32], label: &[u8]) -> [u8; 32] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("hmac key");
    mac.update(label);
    mac.finalize().into_bytes().into()
}

/// Counts raw bytes crossing a stream, independent of framing.
pub struct CountingStream<S> {
    inner: S,
    read: Arc<AtomicU64>,
    written: Arc<AtomicU64>,
}

#[derive(Debug, Clone, Default)]
pub struct ByteCounters {
    pub read: Arc<AtomicU64>,
    pub written: Arc<AtomicU64>,
}

impl ByteCounters {
    pub fn read(&self) -> u64 {
        self.read.load(Ordering::SeqCst)
    }

    pub fn written(&self) -> u64 {
        self.written.load(Ordering::SeqCst)
    }
}

impl<S> CountingStream<S> {
    pub fn new(inner: S) -> (Self, ByteCounters) {
        let counters = ByteCounters::default();
        (Self { inner, read: counters.read.clone(), written: counters.written.clone() }, counters)
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }
}

impl<S: Read> Read for CountingStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.read.fetch_add(n as u64, Ordering::SeqCst);
        Ok(n)
    }
}

impl<S: Write> Write for CountingStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written.fetch_add(n as u64, Ordering::SeqCst);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Flips one bit of the outgoing byte stream at a chosen offset; used for fault injection.
pub struct CorruptingStream<S> {
    inner: S,
    offset: u64,
    mask: u8,
    written: u64,
    fired: Arc<AtomicUsize>,
}

impl<S> CorruptingStream<S> {
    pub fn new(inner: S, offset: u64, mask: u8) -> (Self, Arc<AtomicUsize>) {
        let fired = Arc::new(AtomicUsize::new(0));
        (Self { inner, offset, mask, written: 0, fired: fired.clone() }, fired)
    }
}

impl<S: Read> Read for CorruptingStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        self.inner.read(buf)
    }
}

impl<S: Write> Write for CorruptingStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let start = self.written;
        let end = start + buf.len() as u64;
        self.written = end;
        if self.offset >= start && self.offset < end {
            let mut copy = buf.to_vec();
            copy[(self.offset - start) as usize] ^= self.mask;
            self.fired.fetch_add(1, Ordering::SeqCst);
            self.inner.write_all(&copy)?;
            return Ok(buf.len());
        }
        self.inner.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Little-endian packing helpers shared by the protocol messages.
pub mod codec {
    use super::TransportError;

    pub fn put_u64s(out: &mut Vec<u8>, vals: &[u64]) {
        out.reserve(vals.len() * 8);
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn u64s(vals: &[u64]) -> Vec<u8> {
        let mut out = Vec::with_capacity(vals.len() * 8);
        put_u64s(&mut out, vals);
        out
    }

    pub fn get_u64s(bytes: &[u8], expected: usize) -> Result<Vec<u64>, TransportError> {
        if bytes.len() != expected * 8 {
            return Err(TransportError::malformed(format!("expected {} words, got {} bytes", expected, bytes.len())));
        }
        Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    /// Packs 0/1 bytes into bits, LSB first.
    pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
        let mut out = vec![0u8; bits.len().div_ceil(8)];
        for (i, &b) in bits.iter().enumerate() {
            out[i / 8] |= (b & 1) << (i % 8);
        }
        out
    }

    pub fn unpack_bits(bytes: &[u8], n: usize) -> Result<Vec<u8>, TransportError> {
        if bytes.len() != n.div_ceil(8) {
            return Err(TransportError::malformed(format!("expected {} bits, got {} bytes", n, bytes.len())));
        }
        Ok((0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> (FramedChannel<MemPipe>, FramedChannel<MemPipe>) {
        memory_channel_pair([7u8; 16], [9u8; 32])
    }

    #[test]
    fn frame_layout() {
        let f = encode_frame(&[0u8; 32], 0, Tag::Cmp, &[1u8; 16], &[0xaa, 0xbb]);
        assert_eq!(f[0], 0x20);
        assert_eq!(&f[1..17], &[1u8; 16]);
        assert_eq!(&f[17..21], &2u32.to_le_bytes());
        assert_eq!(&f[21..23], &[0xaa, 0xbb]);
        assert_eq!(f.len(), HEADER_LEN + 2 + MAC_LEN);
    }

    #[test]
    fn send_recv_and_accounting() {
        let (mut a, mut b) = pair();
        a.set_scope("layer0");
        a.send(Tag::Mux, b"hello").unwrap();
        b.set_scope("layer0");
        assert_eq!(b.recv(Tag::Mux).unwrap(), b"hello");
        let frame = (HEADER_LEN + 5 + MAC_LEN) as u64;
        assert_eq!(a.stats().scope("layer0").unwrap().bytes_sent, frame);
        assert_eq!(b.stats().scope("layer0").unwrap().bytes_received, frame);
        assert_eq!(a.stats().total_bytes(), frame);
    }

    #[test]
    fn desync_detected() {
        let (mut a, mut b) = pair();
        a.send(Tag::Mux, b"x").unwrap();
        assert!(matches!(b.recv(Tag::Cmp), Err(TransportError::Desync { expected: Tag::Cmp, got: Tag::Mux })));
    }

    #[test]
    fn abort_propagates() {
        let (mut a, mut b) = pair();
        a.abort("stop");
        assert!(matches!(b.recv(Tag::Cmp), Err(TransportError::PeerAborted(m)) if m == "stop"));
    }

    #[test]
    fn corrupted_byte_fails_mac() {
        let (pa, pb) = MemPipe::pair(Duration::from_secs(5));
        let (bad, fired) = CorruptingStream::new(pa, 25, 0x01);
        let mut a = FramedChannel::new(bad, [0; 16], [1; 32], [2; 32]);
        let mut b = FramedChannel::new(pb, [0; 16], [2; 32], [1; 32]);
        a.send(Tag::Cmp, &[0u8; 40]).unwrap();
        assert_eq!(fired.load(Ordering::SeqCst), 1);
        assert!(matches!(b.recv(Tag::Cmp), Err(TransportError::BadMac)));
    }

    #[test]
    fn corrupted_tag_never_accepted() {
        let (pa, pb) = MemPipe::pair(Duration::from_secs(5));
        let (bad, _) = CorruptingStream::new(pa, 0, 0x01);
        let mut a = FramedChannel::new(bad, [0; 16], [1; 32], [2; 32]);
        let mut b = FramedChannel::new(pb, [0; 16], [2; 32], [1; 32]);
        a.send(Tag::Cmp, b"abc").unwrap();
        assert!(b.recv(Tag::Cmp).is_err());
    }

    #[test]
    fn replayed_frame_rejected() {
        let (pa, pb) = MemPipe::pair(Duration::from_secs(5));
        let mut raw = pa;
        let mut b = FramedChannel::new(pb, [0; 16], [2; 32], [1; 32]);
        let f = encode_frame(&[1; 32], 0, Tag::Cmp, &[0; 16], b"abc");
        raw.write_all(&f).unwrap();
        raw.write_all(&f).unwrap();
        assert!(b.recv(Tag::Cmp).is_ok());
        assert!(matches!(b.recv(Tag::Cmp), Err(TransportError::BadMac)));
    }

    #[test]
    fn bit_packing() {
        let bits = vec![1, 0, 1, 1, 0, 0, 0, 0, 1];
        let packed = codec::pack_bits(&bits);
        assert_eq!(packed, vec![0b0000_1101, 1]);
        assert_eq!(codec::unpack_bits(&packed, 9).unwrap(), bits);
    }
}
