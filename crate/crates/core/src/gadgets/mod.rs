//! Two-party subprotocols over additive shares in `Z_{2^l}`: triples and
//! secure multiplication, comparison and sign test, multiplexing, bit-to-ring
//! conversion, public division and truncation.
//!
//! Every gadget is batched: it takes this party's share words for `n` elements
//! and both parties must call it with the same `n` in the same order.

mod arith;
mod compare;
mod divide;
mod triples;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ot::{OtBackend, OtError};
use crate::ring::{RingConfig, RingError};
use crate::sharing::PartyId;
use crate::transport::{Tag, Transport, TransportError};

pub use arith::{b2a, mux, relu};
pub use compare::{millionaire, positive};
pub use divide::{divide_public, truncate, truncate_local};
pub use triples::{and_bits, gen_bit_triples, gen_triples, secure_mul, BeaverTriples, TripleBackend};

#[derive(Debug, Error)]
pub enum GadgetError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Ot(#[from] OtError),
    #[error(transparent)]
    Ring(#[from] RingError),
    #[error("division by zero")]
    DivideByZero,
    #[error("divisor {0} is too large for the ring")]
    DivisorTooLarge(u64),
    #[error("Beaver triple {0} already used")]
    TripleReused(usize),
    #[error("Beaver triples exhausted")]
    TriplesExhausted,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

impl GadgetError {
    /// The transport error underneath, if any.
    pub fn transport(&self) -> Option<&TransportError> {
        match self {
            GadgetError::Transport(e) => Some(e),
            GadgetError::Ot(OtError::Transport(e)) => Some(e),
            _ => None,
        }
    }
}

/// How fixed-point products are rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruncMode {
    /// Exact two-party floor division by `2^phi`.
    #[default]
    Faithful,
    /// Each party shifts its own share; off by one ULP, rarely by a lot.
    Local,
}

impl std::fmt::Display for TruncMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TruncMode::Faithful => "faithful",
            TruncMode::Local => "local",
        })
    }
}

impl std::str::FromStr for TruncMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "faithful" => Ok(TruncMode::Faithful),
            "local" => Ok(TruncMode::Local),
            other => Err(format!("unknown truncation mode '{other}' (expected faithful|local)")),
        }
    }
}

/// XOR-shared bits held by one party.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolShare {
    pub party: PartyId,
    pub bits: Vec<u8>,
}

/// One party's end of a two-party computation session.
pub struct Party {
    pub id: PartyId,
    pub ring: RingConfig,
    pub chan: Box<dyn Transport>,
    pub ot: Box<dyn OtBackend>,
    pub rng: ChaCha20Rng,
    pub trunc: TruncMode,
    pub triples: TripleBackend,
}

impl Party {
    /// `seed = None` draws local randomness from the OS.
    pub fn new(
        id: PartyId,
        ring: RingConfig,
        chan: Box<dyn Transport>,
        mut ot: Box<dyn OtBackend>,
        seed: Option<u64>,
    ) -> Self {
        let rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ id.index() as u64),
            None => ChaCha20Rng::from_entropy(),
        };
        let triples = if ot.as_dealer().is_some() { TripleBackend::Dealer } else { TripleBackend::OtGilboa };
        Self { id, ring, chan, ot, rng, trunc: TruncMode::default(), triples }
    }

    pub fn with_trunc(mut self, mode: TruncMode) -> Self {
        self.trunc = mode;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.id == PartyId::Zero
    }

    pub(crate) fn random_words(&mut self, n: usize) -> Vec<u64> {
        let mask = self.ring.mask();
        (0..n).map(|_| self.rng.gen::<u64>() & mask).collect()
    }

    /// Sends `payload` and receives the peer's message under the same tag. Party 0
    /// sends first, so large payloads cannot deadlock on full buffers.
    pub(crate) fn exchange(&mut self, tag: Tag, payload: &[u8]) -> Result<Vec<u8>, TransportError> {
        if self.is_zero() {
            self.chan.send(tag, payload)?;
            self.chan.recv(tag)
        } else {
            let got = self.chan.recv(tag)?;
            self.chan.send(tag, payload)?;
            Ok(got)
        }
    }
}

pub(crate) fn check_len(a: usize, b: usize) -> Result<(), GadgetError> {
    if a != b {
        return Err(GadgetError::LengthMismatch(a, b));
    }
    Ok(())
}
