//! IKNP-style OT extension producing random OTs from 128 base OTs.
//!
//! The extension sender plays base-OT receiver with secret choice vector `delta`;
//! the extension receiver plays base-OT sender. Each `extend` call consumes fresh
//! PRG output from every base seed, so batches never reuse correlation material.

use rand::{CryptoRng, RngCore};

use super::base::{random_base_ot_recv, random_base_ot_send};
use super::hash::{tccr_many, Block, Prg};
use super::OtError;
use crate::transport::{Tag, Transport, TransportError};

pub const KAPPA: usize = 128;

/// Transposes a 128x128 bit matrix stored as 128 row words (bit `c` of `m[r]` is entry `(r, c)`).
pub fn transpose128(m: &mut [u128; 128]) {
    let mut j = 64usize;
    let mut mask: u128 = (1u128 << 64) - 1;
    while j != 0 {
        let mut k = 0usize;
        while k < 128 {
            let t = ((m[k] >> j) ^ m[k + j]) & mask;
            m[k] ^= t << j;
            m[k + j] ^= t;
            k = (k + j + 1) & !j;
        }
        j >>= 1;
        mask ^= mask << j;
    }
}

/// Turns 128 column bit-vectors (each `rows/8` bytes) into `rows` row words.
fn columns_to_rows(columns: &[Vec<u8>], rows: usize) -> Vec<Block> {
    debug_assert_eq!(columns.len(), KAPPA);
    debug_assert_eq!(rows % 128, 0);
    let mut out = Vec::with_capacity(rows);
    let mut m = [0u128; 128];
    for blk in 0..rows / 128 {
        for (i, col) in columns.iter().enumerate() {
            m[i] = u128::from_le_bytes(col[blk * 16..blk * 16 + 16].try_into().unwrap());
        }
        transpose128(&mut m);
        out.extend_from_slice(&m);
    }
    out
}

pub struct IknpSender {
    delta: Block,
    seeds: Vec<Prg>,
    counter: u64,
}

pub struct IknpReceiver {
    seeds: Vec<(Prg, Prg)>,
    counter: u64,
}

impl IknpSender {
    pub fn setup<R: RngCore + CryptoRng>(chan: &mut dyn Transport, rng: &mut R) -> Result<Self, OtError> {
        let delta = ((rng.next_u64() as u128) << 64) | rng.next_u64() as u128;
        let choices: Vec<bool> = (0..KAPPA).map(|i| (delta >> i) & 1 == 1).collect();
        let keys = random_base_ot_recv(chan, rng, &choices)?;
        Ok(Self { delta, seeds: keys.into_iter().map(Prg::new).collect(), counter: 0 })
    }

    /// `n` random OT pairs `(r0, r1)`.
    pub fn extend(&mut self, chan: &mut dyn Transport, n: usize) -> Result<Vec<(Block, Block)>, OtError> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let rows = n.next_multiple_of(128);
        let col_bytes = rows / 8;
        let u = chan.recv(Tag::OtExtend)?;
        if u.len() != KAPPA * col_bytes {
            return Err(TransportError::malformed("OT extension matrix size").into());
        }
        let mut columns = Vec::with_capacity(KAPPA);
        for (i, prg) in self.seeds.iter_mut().enumerate() {
            let mut q = vec![0u8; col_bytes];
            prg.fill(&mut q);
            if (self.delta >> i) & 1 == 1 {
                for (a, b) in q.iter_mut().zip(&u[i * col_bytes..(i + 1) * col_bytes]) {
                    *a ^= b;
                }
            }
            columns.push(q);
        }
        let q_rows = columns_to_rows(&columns, rows);
        let base = self.counter as u128;
        self.counter += rows as u64;
        let h0 = tccr_many(&q_rows[..n], |j| base + j as u128);
        let flipped: Vec<Block> = q_rows[..n].iter().map(|q| q ^ self.delta).collect();
        let h1 = tccr_many(&flipped, |j| base + j as u128);
        Ok(h0.into_iter().zip(h1).collect())
    }
}

impl IknpReceiver {
    pub fn setup<R: RngCore + CryptoRng>(chan: &mut dyn Transport, rng: &mut R) -> Result<Self, OtError> {
        let pairs = random_base_ot_send(chan, rng, KAPPA)?;
        Ok(Self { seeds: pairs.into_iter().map(|(a, b)| (Prg::new(a), Prg::new(b))).collect(), counter: 0 })
    }

    /// Random OT outputs `r_{c_j}` for the given choice bits.
    pub fn extend<R: RngCore>(
        &mut self,
        chan: &mut dyn Transport,
        rng: &mut R,
        choices: &[u8],
    ) -> Result<Vec<Block>, OtError> {
        let n = choices.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let rows = n.next_multiple_of(128);
        let col_bytes = rows / 8;
        let mut r = vec![0u8; col_bytes];
        rng.fill_bytes(&mut r);
        for (j, &c) in choices.iter().enumerate() {
            let bit = 1u8 << (j % 8);
            if c & 1 == 1 {
                r[j / 8] |= bit;
            } else {
                r[j / 8] &= !bit;
            }
        }
        let mut u = Vec::with_capacity(KAPPA * col_bytes);
        let mut columns = Vec::with_capacity(KAPPA);
        for (g0, g1) in self.seeds.iter_mut() {
            let mut t = vec![0u8; col_bytes];
            g0.fill(&mut t);
            let mut w = vec![0u8; col_bytes];
            g1.fill(&mut w);
            for ((wb, tb), rb) in w.iter_mut().zip(&t).zip(&r) {
                *wb ^= tb ^ rb;
            }
            u.extend_from_slice(&w);
            columns.push(t);
        }
        chan.send(Tag::OtExtend, &u)?;
        let t_rows = columns_to_rows(&columns, rows);
        let base = self.counter as u128;
        self.counter += rows as u64;
        Ok(tccr_many(&t_rows[..n], |j| base + j as u128))
    }
}
