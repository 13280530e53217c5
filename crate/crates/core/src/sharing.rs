//! 2-of-2 additive secret sharing over `Z_{2^l}`.

use rand::RngCore;
use thiserror::Error;

use crate::ring::{FixedTensor, RingConfig, RingError};

/// Party 0 is the model owner, party 1 the cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum PartyId {
    Zero = 0,
    One = 1,
}

impl PartyId {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> PartyId {
        match self {
            PartyId::Zero => PartyId::One,
            PartyId::One => PartyId::Zero,
        }
    }

    pub fn from_index(i: usize) -> Option<PartyId> {
        match i {
            0 => Some(PartyId::Zero),
            1 => Some(PartyId::One),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ShareError {
    #[error("shares belong to different parties ({0:?} vs {1:?})")]
    PartyMismatch(PartyId, PartyId),
    #[error("both shares claim party {0:?}")]
    DuplicateParty(PartyId),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("ring configuration mismatch")]
    ConfigMismatch,
    #[error(transparent)]
    Ring(#[from] RingError),
}

/// One party's additive share of a tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArithShare {
    party: PartyId,
    values: FixedTensor,
}

impl ArithShare {
    pub fn new(party: PartyId, values: FixedTensor) -> Self {
        Self { party, values }
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    pub fn values(&self) -> &FixedTensor {
        &self.values
    }

    pub fn into_values(self) -> FixedTensor {
        self.values
    }

    pub fn config(&self) -> RingConfig {
        self.values.config()
    }

    pub fn shape(&self) -> &[usize] {
        self.values.shape()
    }

    /// Serialized as: rank (u32), dims (u64 each), element count (u64), words (u64 each),
    /// all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.shape().len() + self.values.len()));
        out.push(self.party as u8);
        out.extend_from_slice(&self.config().bits.to_le_bytes());
        out.extend_from_slice(&self.config().frac_bits.to_le_bytes());
        encode_tensor_words(&mut out, self.values.shape(), self.values.data());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShareError> {
        let bad = || ShareError::Ring(RingError::ShapeMismatch { shape: vec![], len: bytes.len() });
        if bytes.len() < 9 {
            return Err(bad());
        }
        let party = PartyId::from_index(bytes[0] as usize).ok_or_else(bad)?;
        let bits = u32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let frac = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let cfg = RingConfig::new(bits, frac)?;
        let (shape, data) = decode_tensor_words(&bytes[9..]).ok_or_else(bad)?;
        Ok(Self::new(party, FixedTensor::new(shape, data, cfg)?))
    }
}

pub(crate) fn encode_tensor_words(out: &mut Vec<u8>, shape: &[usize], data: &[u64]) {
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn decode_tensor_words(bytes: &[u8]) -> Option<(Vec<usize>, Vec<u64>)> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Option<&[u8]> {
        let s = bytes.get(*pos..*pos + n)?;
        *pos += n;
        Some(s)
    };
    let rank = u32::from_le_bytes(take(&mut pos, 4)?.try_into().ok()?) as usize;
    if rank > 16 {
        return None;
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?) as usize);
    }
    let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().ok()?) as usize;
    if bytes.len() - pos != len.checked_mul(8)? {
        return None;
    }
    let data = bytes[pos..].chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
    Some((shape, data))
}

/// Both shares of a tensor, as held by a dealer or a test harness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SharedTensor {
    pub share0: ArithShare,
    pub share1: ArithShare,
}

/// Split `x` into `(x - r, r)` with `r` uniform over the ring.
pub fn share<R: RngCore + ?Sized>(x: &FixedTensor, rng: &mut R) -> SharedTensor {
    let cfg = x.config();
    let r: Vec<u64> = (0..x.len()).map(|_| rng.next_u64() & cfg.mask()).collect();
    share_with_mask(x, r)
}

/// Sharing with caller-provided mask words (the second share).
pub fn share_with_mask(x: &FixedTensor, r: Vec<u64>) -> SharedTensor {
    let cfg = x.config();
    let s0: Vec<u64> = x.data().iter().zip(&r).map(|(&v, &m)| cfg.sub(v, m)).collect();
    let shape = x.shape().to_vec();
    SharedTensor {
        share0: ArithShare::new(PartyId::Zero, FixedTensor::new(shape.clone(), s0, cfg).unwrap()),
        share1: ArithShare::new(PartyId::One, FixedTensor::new(shape, r, cfg).unwrap()),
    }
}

pub fn reconstruct(s: &SharedTensor) -> Result<FixedTensor, ShareError> {
    reconstruct_pair(&s.share0, &s.share1)
}

pub fn reconstruct_pair(a: &ArithShare, b: &ArithShare) -> Result<FixedTensor, ShareError> {
    if a.party == b.party {
        return Err(ShareError::DuplicateParty(a.party));
    }
    if a.shape() != b.shape() {
        return Err(ShareError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    if a.config() != b.config() {
        return Err(ShareError::ConfigMismatch);
    }
    let cfg = a.config();
    let data = a.values.data().iter().zip(b.values.data()).map(|(&x, &y)| cfg.add(x, y)).collect();
    Ok(FixedTensor::new(a.shape().to_vec(), data, cfg)?)
}

fn check_same(a: &ArithShare, b: &FixedTensor) -> Result<(), ShareError> {
    if a.shape() != b.shape() {
        return Err(ShareError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    if a.config() != b.config() {
        return Err(ShareError::ConfigMismatch);
    }
    Ok(())
}

pub fn add_shares(a: &ArithShare, b: &ArithShare) -> Result<ArithShare, ShareError> {
    if a.party != b.party {
        return Err(ShareError::PartyMismatch(a.party, b.party));
    }
    check_same(a, &b.values)?;
    let cfg = a.config();
    let data = a.values.data().iter().zip(b.values.data()).map(|(&x, &y)| cfg.add(x, y)).collect();
    Ok(ArithShare::new(a.party, FixedTensor::new(a.shape().to_vec(), data, cfg)?))
}

/// Adds a public tensor; only party 0's share changes.
pub fn add_public(a: &ArithShare, c: &FixedTensor) -> Result<ArithShare, ShareError> {
    check_same(a, c)?;
    if a.party == PartyId::One {
        return Ok(a.clone());
    }
    let cfg = a.config();
    let data = a.values.data().iter().zip(c.data()).map(|(&x, &y)| cfg.add(x, y)).collect();
    Ok(ArithShare::new(a.party, FixedTensor::new(a.shape().to_vec(), data, cfg)?))
}

/// Elementwise product with a public tensor. When `c` is fixed-point scaled the
/// result carries scale `2^(2 phi)` and must be truncated.
pub fn mul_public(a: &ArithShare, c: &FixedTensor) -> Result<ArithShare, ShareError> {
    check_same(a, c)?;
    let cfg = a.config();
    let data = a.values.data().iter().zip(c.data()).map(|(&x, &y)| cfg.mul(x, y)).collect();
    Ok(ArithShare::new(a.party, FixedTensor::new(a.shape().to_vec(), data, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn scalar(v: u64, cfg: RingConfig) -> FixedTensor {
        FixedTensor::new(vec![1], vec![v], cfg).unwrap()
    }

    #[test]
    fn forced_mask_examples() {
        let cfg = RingConfig::default();
        let s = share_with_mask(&scalar(5, cfg), vec![3]);
        assert_eq!(s.share0.values().data(), &[2]);
        assert_eq!(s.share1.values().data(), &[3]);
        assert_eq!(reconstruct(&s).unwrap().data(), &[5]);

        let small = RingConfig::new(4, 2).unwrap();
        let s = share_with_mask(&scalar(0, small), vec![7]);
        assert_eq!(s.share0.values().data(), &[9]);
        assert_eq!(reconstruct(&s).unwrap().data(), &[0]);
    }

    #[test]
    fn random_roundtrip() {
        let cfg = RingConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x = scalar(rng.next_u64() & cfg.mask(), cfg);
            assert_eq!(reconstruct(&share(&x, &mut rng)).unwrap(), x);
        }
    }

    #[test]
    fn local_linearity() {
        let cfg = RingConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let a = share(&scalar(3, cfg), &mut rng);
        let b = share(&scalar(4, cfg), &mut rng);
        let sum = SharedTensor {
            share0: add_shares(&a.share0, &b.share0).unwrap(),
            share1: add_shares(&a.share1, &b.share1).unwrap(),
        };
        assert_eq!(reconstruct(&sum).unwrap().data(), &[7]);

        let two = scalar(2, cfg);
        let plus = SharedTensor {
            share0: add_public(&a.share0, &two).unwrap(),
            share1: add_public(&a.share1, &two).unwrap(),
        };
        assert_eq!(reconstruct(&plus).unwrap().data(), &[5]);

        let times = SharedTensor {
            share0: mul_public(&a.share0, &two).unwrap(),
            share1: mul_public(&a.share1, &two).unwrap(),
        };
        // reconstruct-then-multiply oracle
        let oracle = cfg.mul(reconstruct(&a).unwrap().data()[0], 2);
        assert_eq!(reconstruct(&times).unwrap().data(), &[oracle]);
        assert_eq!(oracle, 6);
    }

    #[test]
    fn party_mismatch_rejected() {
        let cfg = RingConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = share(&scalar(3, cfg), &mut rng);
        assert!(matches!(add_shares(&a.share0, &a.share1), Err(ShareError::PartyMismatch(..))));
        assert!(matches!(reconstruct_pair(&a.share0, &a.share0), Err(ShareError::DuplicateParty(_))));
    }

    #[test]
    fn serialization_roundtrip() {
        let cfg = RingConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x = FixedTensor::new(vec![2, 3], (0..6).collect(), cfg).unwrap();
        let s = share(&x, &mut rng);
        let bytes = s.share1.to_bytes();
        assert_eq!(ArithShare::from_bytes(&bytes).unwrap(), s.share1);
        assert!(ArithShare::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
