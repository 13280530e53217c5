//! Session driver for the two computing parties: session setup, key exchange,
//! layer-by-layer secure evaluation and communication accounting.
//!
//! Setup, charged to the `setup` scope:
//!
//! 1. owner -> cloud `SessionInit`: JSON [`SessionInit`] with the weightless model.
//! 2. cloud -> owner `HePublicKey`.
//!
//! Layer `i` is then charged to the scope `"{i}:{kind}"`, and a closing
//! `Control` exchange to `session`.

use std::io::{Read, Write};
use std::thread;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gadgets::{Party, TruncMode};
use crate::he::{HeContext, HeError, HeParams};
use crate::layers::{forward_layer, LayerContext, LayerError};
use crate::model::{ModelError, ModelSpec};
use crate::ot::{make_backend, OtKind};
use crate::ring::FixedTensor;
use crate::sharing::{share, ArithShare, PartyId, ShareError};
use crate::transport::{
    derive_direction_key, ByteCounters, CommStats, CountingStream, FramedChannel, MemPipe, SessionId, Tag, Transport,
    TransportError,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    He(#[from] HeError),
    #[error(transparent)]
    Share(#[from] ShareError),
    #[error("session setup failed: {0}")]
    Setup(String),
    #[error("layer {layer} ({kind}) failed: {source}")]
    AtLayer { layer: usize, kind: &'static str, source: LayerError },
    #[error("peer thread failed: {0}")]
    Peer(String),
}

impl RuntimeError {
    pub fn transport(&self) -> Option<&TransportError> {
        match self {
            RuntimeError::Transport(e) => Some(e),
            RuntimeError::Layer(l) | RuntimeError::AtLayer { source: l, .. } => l.transport(),
            _ => None,
        }
    }
}

/// Per-session protocol choices.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub ot: OtKind,
    pub trunc: TruncMode,
    /// Seeds all protocol randomness; `None` uses OS entropy. The dealer backend
    /// needs the same seed at both parties.
    pub seed: Option<u64>,
    pub he: HeParams,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { ot: OtKind::Real, trunc: TruncMode::Faithful, seed: None, he: HeParams::default_secure() }
    }
}

/// First message of a session, sent by the model owner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInit {
    /// Architecture only; weights are never serialized into this message.
    pub model: ModelSpec,
    pub batch: usize,
    pub trunc: TruncMode,
    pub ot: String,
    pub he_digest: String,
}

pub struct SessionOutcome {
    pub share: ArithShare,
    pub stats: CommStats,
    pub elapsed: Duration,
}

/// Drives every layer of `model` over this party's share of the input and
/// returns the share of the output. The cloud passes the weightless model.
///
/// On failure the peer is notified with an abort frame and no share is returned.
pub fn run_secure_inference(
    ctx: &mut LayerContext,
    model: &ModelSpec,
    my_share: &ArithShare,
) -> Result<ArithShare, RuntimeError> {
    let result = infer_inner(ctx, model, my_share);
    if let Err(e) = &result {
        if !matches!(e.transport(), Some(TransportError::PeerAborted(_))) {
            ctx.party.chan.abort(&e.to_string());
        }
    }
    result
}

fn infer_inner(ctx: &mut LayerContext, model: &ModelSpec, my_share: &ArithShare) -> Result<ArithShare, RuntimeError> {
    let shapes = model.activation_shapes()?;
    let batch = model.batch_of(my_share.shape())?;
    if my_share.config() != model.ring || my_share.party() != ctx.party.id {
        return Err(RuntimeError::Setup("share does not belong to this party and ring".into()));
    }
    let mut acts = vec![my_share.values().data().to_vec()];
    for (i, layer) in model.layers.iter().enumerate() {
        let kind = layer.kind().name();
        ctx.party.chan.set_scope(&format!("{i}:{kind}"));
        let y = forward_layer(ctx, layer, &shapes[i], &acts, batch)
            .map_err(|source| RuntimeError::AtLayer { layer: i, kind, source })?;
        acts.push(y);
    }
    ctx.party.chan.set_scope("session");
    finish(ctx)?;
    let out = shapes.last().unwrap();
    let shape = if my_share.shape() == model.input_shape.as_slice() {
        out.clone()
    } else {
        std::iter::once(batch).chain(out.iter().copied()).collect()
    };
    let values = FixedTensor::new(shape, acts.pop().unwrap(), model.ring).map_err(ModelError::from)?;
    Ok(ArithShare::new(ctx.party.id, values))
}

/// Closing exchange. The owner speaks first and listens last, so a fault the
/// cloud detects in any owner frame also fails the owner.
fn finish(ctx: &mut LayerContext) -> Result<(), RuntimeError> {
    let chan = &mut ctx.party.chan;
    let check = |body: Vec<u8>| {
        if body == DONE {
            Ok(())
        } else {
            Err(TransportError::malformed("closing message"))
        }
    };
    if ctx.party.id == PartyId::Zero {
        chan.send(Tag::Control, DONE)?;
        check(chan.recv(Tag::Control)?)?;
    } else {
        check(chan.recv(Tag::Control)?)?;
        chan.send(Tag::Control, DONE)?;
    }
    Ok(())
}

const DONE: &[u8] = b"done";

fn with_abort<T>(chan: &mut dyn Transport, r: Result<T, RuntimeError>) -> Result<T, RuntimeError> {
    if let Err(e) = &r {
        if !matches!(e.transport(), Some(TransportError::PeerAborted(_))) {
            chan.abort(&e.to_string());
        }
    }
    r
}

/// Model-owner side of one session.
pub fn run_owner(
    mut chan: Box<dyn Transport>,
    model: &ModelSpec,
    my_share: &ArithShare,
    opts: &SessionOptions,
) -> Result<SessionOutcome, RuntimeError> {
    let start = Instant::now();
    chan.set_scope("setup");
    let setup = (|| {
        let he = HeContext::new(opts.he.clone())?;
        let init = SessionInit {
            model: model.skeleton(),
            batch: model.batch_of(my_share.shape())?,
            trunc: opts.trunc,
            ot: opts.ot.to_string(),
            he_digest: hex::encode(he.digest()),
        };
        let body = serde_json::to_vec(&init).map_err(|e| RuntimeError::Setup(e.to_string()))?;
        Ok::<_, RuntimeError>((he, body))
    })();
    let (he, body) = with_abort(chan.as_mut(), setup)?;
    chan.send(Tag::SessionInit, &body)?;
    let party = Party::new(PartyId::Zero, model.ring, chan, make_backend(opts.ot, PartyId::Zero, opts.seed), opts.seed)
        .with_trunc(opts.trunc);
    let mut ctx = LayerContext::establish(party, he)?;
    let share = run_secure_inference(&mut ctx, model, my_share)?;
    Ok(SessionOutcome { share, stats: ctx.party.chan.stats(), elapsed: start.elapsed() })
}

/// Cloud side of one session: learns the architecture from the owner.
pub fn run_cloud(
    mut chan: Box<dyn Transport>,
    my_share: &ArithShare,
    opts: &SessionOptions,
) -> Result<SessionOutcome, RuntimeError> {
    let start = Instant::now();
    chan.set_scope("setup");
    let setup = (|| {
        let body = chan.recv(Tag::SessionInit)?;
        let init: SessionInit = serde_json::from_slice(&body).map_err(|e| RuntimeError::Setup(e.to_string()))?;
        let he = HeContext::new(opts.he.clone())?;
        if init.he_digest != hex::encode(he.digest()) {
            return Err(RuntimeError::Setup("HE parameter sets differ".into()));
        }
        if init.ot != opts.ot.to_string() {
            return Err(RuntimeError::Setup(format!("OT backend mismatch: peer uses {}", init.ot)));
        }
        if !init.model.is_skeleton() {
            return Err(RuntimeError::Setup("session init carried weights".into()));
        }
        let report = crate::model::validate_graph(&init.model);
        if !report.is_empty() {
            return Err(ModelError::Invalid(report).into());
        }
        if init.model.batch_of(my_share.shape())? != init.batch {
            return Err(RuntimeError::Setup("batch size differs from the owner's".into()));
        }
        Ok((init, he))
    })();
    let (init, he) = match setup {
        Ok(v) => v,
        Err(e) => return with_abort(chan.as_mut(), Err(e)),
    };
    let party = Party::new(PartyId::One, init.model.ring, chan, make_backend(opts.ot, PartyId::One, opts.seed), opts.seed)
        .with_trunc(init.trunc);
    let mut ctx = LayerContext::establish(party, he)?;
    let share = run_secure_inference(&mut ctx, &init.model, my_share)?;
    Ok(SessionOutcome { share, stats: ctx.party.chan.stats(), elapsed: start.elapsed() })
}

/// Result of running both parties in one process.
pub struct LocalRun {
    pub output: FixedTensor,
    pub owner: SessionOutcome,
    pub cloud: SessionOutcome,
    /// Raw bytes written by the owner and by the cloud, counted below the framing.
    pub owner_wire: ByteCounters,
    pub cloud_wire: ByteCounters,
}

/// Wraps `stream` in a framed channel whose MAC keys are derived from `key`.
pub fn framed<S: Read + Write + Send>(stream: S, session: SessionId, key: &[u8; 32], party: PartyId) -> FramedChannel<S> {
    let k01 = derive_direction_key(key, b"0->1");
    let k10 = derive_direction_key(key, b"1->0");
    match party {
        PartyId::Zero => FramedChannel::new(stream, session, k01, k10),
        PartyId::One => FramedChannel::new(stream, session, k10, k01),
    }
}

/// Runs both parties on existing shares over an in-memory channel.
pub fn run_local_shares(
    model: &ModelSpec,
    share0: &ArithShare,
    share1: &ArithShare,
    opts: &SessionOptions,
) -> Result<LocalRun, RuntimeError> {
    let (a, b) = MemPipe::pair(Duration::from_secs(300));
    let (a, owner_wire) = CountingStream::new(a);
    let (b, cloud_wire) = CountingStream::new(b);
    let session = [0x11; 16];
    let key = [0x22; 32];
    let c0 = framed(a, session, &key, PartyId::Zero);
    let c1 = framed(b, session, &key, PartyId::One);
    let (owner, cloud) = thread::scope(|s| {
        let h = s.spawn(|| run_cloud(Box::new(c1), share1, opts));
        let owner = run_owner(Box::new(c0), model, share0, opts);
        (owner, h.join())
    });
    let cloud = cloud.map_err(|_| RuntimeError::Peer("cloud thread panicked".into()))?;
    let (owner, cloud) = match (owner, cloud) {
        (Ok(o), Ok(c)) => (o, c),
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let output = crate::sharing::reconstruct_pair(&owner.share, &cloud.share)?;
    Ok(LocalRun { output, owner, cloud, owner_wire, cloud_wire })
}

/// Shares `input` and runs both parties in-process.
pub fn run_local(model: &ModelSpec, input: &FixedTensor, opts: &SessionOptions) -> Result<LocalRun, RuntimeError> {
    let mut rng = match opts.seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s ^ 0x5348_4152_4553),
        None => ChaCha20Rng::from_entropy(),
    };
    let shared = share(input, &mut rng);
    run_local_shares(model, &shared.share0, &shared.share1, opts)
}

/// Splits a tensor for dispatch with a caller-provided generator.
pub fn split_input(input: &FixedTensor, rng: &mut impl rand::RngCore) -> (ArithShare, ArithShare) {
    let s = share(input, rng);
    (s.share0, s.share1)
}
