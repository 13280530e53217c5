//! 1-out-of-2 oblivious transfer: base OT, IKNP extension, random-OT
//! derandomization, and a dealer backend with the same interface.

pub mod base;
pub mod dealer;
pub mod hash;
pub mod iknp;
pub mod rot;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sharing::PartyId;
use crate::transport::{Transport, TransportError};

pub use dealer::DealerBackend;
pub use hash::Block;
pub use iknp::{IknpReceiver, IknpSender};
pub use rot::{RotReceiverBatch, RotSenderBatch};

#[derive(Debug, Error)]
pub enum OtError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("random OT instance {0} already consumed")]
    Reused(usize),
    #[error("random OT batch exhausted")]
    Exhausted,
    #[error("invalid group element received")]
    InvalidPoint,
    #[error("message length mismatch")]
    MessageLength,
}

/// Which correlated-randomness source drives the gadgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OtKind {
    /// Base OT + IKNP extension over the channel.
    Real,
    /// Shared-seed dealer; test and benchmark use only.
    Dealer,
}

impl std::fmt::Display for OtKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OtKind::Real => "real",
            OtKind::Dealer => "dealer",
        })
    }
}

impl std::str::FromStr for OtKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(OtKind::Real),
            "dealer" => Ok(OtKind::Dealer),
            other => Err(format!("unknown OT backend '{other}' (expected real|dealer)")),
        }
    }
}

/// Supplier of random OTs in both directions.
///
/// A call to `random_send` on one party must be matched by `random_recv` with the
/// same `n` on the other.
pub trait OtBackend: Send {
    fn party(&self) -> PartyId;

    fn random_send(&mut self, chan: &mut dyn Transport, n: usize) -> Result<RotSenderBatch, OtError>;

    fn random_recv(&mut self, chan: &mut dyn Transport, n: usize) -> Result<RotReceiverBatch, OtError>;

    /// Access to the dealer, for gadgets that can take correlations directly.
    fn as_dealer(&mut self) -> Option<&mut DealerBackend> {
        None
    }
}

/// Base OT + IKNP extension, set up lazily per direction.
pub struct IknpBackend {
    party: PartyId,
    rng: ChaCha20Rng,
    sender: Option<IknpSender>,
    receiver: Option<IknpReceiver>,
}

impl IknpBackend {
    pub fn new(party: PartyId, seed: Option<u64>) -> Self {
        let rng = match seed {
            Some(s) => ChaCha20Rng::seed_from_u64(s ^ 0x6f74_6b6e_7000 ^ party as u64),
            None => ChaCha20Rng::from_entropy(),
        };
        Self { party, rng, sender: None, receiver: None }
    }
}

impl OtBackend for IknpBackend {
    fn party(&self) -> PartyId {
        self.party
    }

    fn random_send(&mut self, chan: &mut dyn Transport, n: usize) -> Result<RotSenderBatch, OtError> {
        if self.sender.is_none() {
            self.sender = Some(IknpSender::setup(chan, &mut self.rng)?);
        }
        let pairs = self.sender.as_mut().unwrap().extend(chan, n)?;
        Ok(RotSenderBatch::new(pairs))
    }

    fn random_recv(&mut self, chan: &mut dyn Transport, n: usize) -> Result<RotReceiverBatch, OtError> {
        if self.receiver.is_none() {
            self.receiver = Some(IknpReceiver::setup(chan, &mut self.rng)?);
        }
        let choices: Vec<u8> = (0..n).map(|_| (self.rng.next_u32() & 1) as u8).collect();
        let keys = self.receiver.as_mut().unwrap().extend(chan, &mut self.rng, &choices)?;
        Ok(RotReceiverBatch::new(choices, keys))
    }
}

pub fn make_backend(kind: OtKind, party: PartyId, seed: Option<u64>) -> Box<dyn OtBackend> {
    match kind {
        OtKind::Real => Box::new(IknpBackend::new(party, seed)),
        // Without a fixed seed the dealer still needs both parties to agree; callers
        // that use the dealer always pass the shared seed.
        OtKind::Dealer => Box::new(DealerBackend::new(party, seed.unwrap_or(0))),
    }
}
