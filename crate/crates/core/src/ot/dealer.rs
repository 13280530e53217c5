//! Trusted-dealer correlated randomness.
//!
//! Both parties expand one dealer seed in lockstep and each keeps only its own
//! half, which stands in for a third party handing out correlations. Test and
//! benchmark use only: the seed reveals everything.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::hash::Block;
use super::rot::{RotReceiverBatch, RotSenderBatch};
use super::{OtBackend, OtError};
use crate::sharing::PartyId;
use crate::transport::Transport;

pub struct DealerBackend {
    party: PartyId,
    stream: ChaCha20Rng,
}

impl DealerBackend {
    pub fn new(party: PartyId, seed: u64) -> Self {
        let mut s = [0u8; 32];
        s[..8].copy_from_slice(&seed.to_le_bytes());
        s[8..24].copy_from_slice(b"privinfer-dealer");
        Self { party, stream: ChaCha20Rng::from_seed(s) }
    }

    fn draw_block(&mut self) -> Block {
        ((self.stream.next_u64() as u128) << 64) | self.stream.next_u64() as u128
    }

    /// XOR-shared bit triples `(a, b, c)` with `c = a & b`; returns this party's halves.
    pub fn bit_triples(&mut self, n: usize) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let (mut a, mut b, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let w = self.stream.next_u32();
            let (a0, a1, b0, b1, c0) = (w & 1, (w >> 1) & 1, (w >> 2) & 1, (w >> 3) & 1, (w >> 4) & 1);
            let c1 = ((a0 ^ a1) & (b0 ^ b1)) ^ c0;
            match self.party {
                PartyId::Zero => {
                    a.push(a0 as u8);
                    b.push(b0 as u8);
                    c.push(c0 as u8);
                }
                PartyId::One => {
                    a.push(a1 as u8);
                    b.push(b1 as u8);
                    c.push(c1 as u8);
                }
            }
        }
        (a, b, c)
    }

    /// Additive triples over `Z_{mask+1}`; returns this party's `(a, b, c)` words.
    pub fn arith_triples(&mut self, n: usize, mask: u64) -> Vec<[u64; 3]> {
        (0..n)
            .map(|_| {
                let [a0, a1, b0, b1, c0]: [u64; 5] = std::array::from_fn(|_| self.stream.gen::<u64>() & mask);
                let c = a0.wrapping_add(a1).wrapping_mul(b0.wrapping_add(b1));
                let c1 = c.wrapping_sub(c0) & mask;
                match self.party {
                    PartyId::Zero => [a0, b0, c0],
                    PartyId::One => [a1, b1, c1],
                }
            })
            .collect()
    }
}

impl OtBackend for DealerBackend {
    fn party(&self) -> PartyId {
        self.party
    }

    fn random_send(&mut self, _chan: &mut dyn Transport, n: usize) -> Result<RotSenderBatch, OtError> {
        let mut pairs = Vec::with_capacity(n);
        for _ in 0..n {
            let r0 = self.draw_block();
            let r1 = self.draw_block();
            let _choice = self.stream.next_u32() & 1;
            pairs.push((r0, r1));
        }
        Ok(RotSenderBatch::new(pairs))
    }

    fn random_recv(&mut self, _chan: &mut dyn Transport, n: usize) -> Result<RotReceiverBatch, OtError> {
        let mut choices = Vec::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        for _ in 0..n {
            let r0 = self.draw_block();
            let r1 = self.draw_block();
            let c = (self.stream.next_u32() & 1) as u8;
            choices.push(c);
            keys.push(if c == 1 { r1 } else { r0 });
        }
        Ok(RotReceiverBatch::new(choices, keys))
    }

    fn as_dealer(&mut self) -> Option<&mut DealerBackend> {
        Some(self)
    }
}
