//! Random-OT batches and their conversion into chosen-message, correlated and
//! 1-out-of-2^k transfers (Beaver derandomization). Every random instance can be
//! consumed exactly once.

use super::hash::{permute, tccr, tccr_from_permuted, Block};
use super::OtError;
use crate::transport::codec::{get_u64s, pack_bits, u64s, unpack_bits};
use crate::transport::{Tag, Transport, TransportError};

/// Sender half of a batch of random OTs.
#[derive(Debug)]
pub struct RotSenderBatch {
    pairs: Vec<(Block, Block)>,
    used: Vec<bool>,
}

/// Receiver half: random choice bits and the matching messages.
#[derive(Debug)]
pub struct RotReceiverBatch {
    choices: Vec<u8>,
    keys: Vec<Block>,
    used: Vec<bool>,
}

impl RotSenderBatch {
    pub fn new(pairs: Vec<(Block, Block)>) -> Self {
        let used = vec![false; pairs.len()];
        Self { pairs, used }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Consumes instance `i`.
    pub fn take(&mut self, i: usize) -> Result<(Block, Block), OtError> {
        let used = self.used.get_mut(i).ok_or(OtError::Exhausted)?;
        if *used {
            return Err(OtError::Reused(i));
        }
        *used = true;
        Ok(self.pairs[i])
    }

    /// Derandomization, sender step: given the receiver's correction bit `e = b ^ c`,
    /// masks `(m0, m1)` so that only `m_b` is recoverable.
    pub fn derandomize(&mut self, i: usize, e: u8, m0: u64, m1: u64, mask: u64) -> Result<(u64, u64), OtError> {
        let (r0, r1) = self.take(i)?;
        let (k0, k1) = if e & 1 == 0 { (r0, r1) } else { (r1, r0) };
        Ok(((m0 ^ k0 as u64) & mask, (m1 ^ k1 as u64) & mask))
    }
}

impl RotReceiverBatch {
    pub fn new(choices: Vec<u8>, keys: Vec<Block>) -> Self {
        assert_eq!(choices.len(), keys.len());
        let used = vec![false; keys.len()];
        Self { choices, keys, used }
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn take(&mut self, i: usize) -> Result<(u8, Block), OtError> {
        let used = self.used.get_mut(i).ok_or(OtError::Exhausted)?;
        if *used {
            return Err(OtError::Reused(i));
        }
        *used = true;
        Ok((self.choices[i], self.keys[i]))
    }

    /// Derandomization, receiver step one: consumes instance `i` and returns the
    /// correction bit for chosen bit `b`, plus the key needed to finish.
    pub fn correction(&mut self, i: usize, b: u8) -> Result<(u8, Block), OtError> {
        let (c, k) = self.take(i)?;
        Ok(((b ^ c) & 1, k))
    }
}

/// Receiver step two: unmask the chosen message.
pub fn derandomize_finish(key: Block, b: u8, y: (u64, u64), mask: u64) -> u64 {
    let masked = if b & 1 == 0 { y.0 } else { y.1 };
    (masked ^ key as u64) & mask
}

/// Chosen-message OT of `mask`-bounded words, sender side.
pub fn chosen_send(
    chan: &mut dyn Transport,
    batch: &mut RotSenderBatch,
    messages: &[[u64; 2]],
    mask: u64,
    tag: Tag,
) -> Result<(), OtError> {
    let n = messages.len();
    let e = unpack_bits(&chan.recv(tag)?, n)?;
    let mut out = Vec::with_capacity(2 * n);
    for (i, (m, &ei)) in messages.iter().zip(&e).enumerate() {
        let (y0, y1) = batch.derandomize(i, ei, m[0], m[1], mask)?;
        out.push(y0);
        out.push(y1);
    }
    chan.send(tag, &u64s(&out))?;
    Ok(())
}

/// Chosen-message OT, receiver side.
pub fn chosen_recv(
    chan: &mut dyn Transport,
    batch: &mut RotReceiverBatch,
    choices: &[u8],
    mask: u64,
    tag: Tag,
) -> Result<Vec<u64>, OtError> {
    let n = choices.len();
    let mut e = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for (i, &b) in choices.iter().enumerate() {
        let (ei, k) = batch.correction(i, b)?;
        e.push(ei);
        keys.push(k);
    }
    chan.send(tag, &pack_bits(&e))?;
    let y = get_u64s(&chan.recv(tag)?, 2 * n)?;
    Ok(choices
        .iter()
        .zip(&keys)
        .enumerate()
        .map(|(i, (&b, &k))| derandomize_finish(k, b, (y[2 * i], y[2 * i + 1]), mask))
        .collect())
}

/// Correlated OT over `Z_{mask+1}`, sender side. Returns `v` such that the receiver
/// ends with `v + b * delta`.
pub fn cot_send(
    chan: &mut dyn Transport,
    batch: &mut RotSenderBatch,
    deltas: &[u64],
    mask: u64,
    tag: Tag,
) -> Result<Vec<u64>, OtError> {
    let n = deltas.len();
    let e = unpack_bits(&chan.recv(tag)?, n)?;
    let mut v = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (i, (&d, &ei)) in deltas.iter().zip(&e).enumerate() {
        let (r0, r1) = batch.take(i)?;
        let (k0, k1) = if ei == 0 { (r0, r1) } else { (r1, r0) };
        let base = k0 as u64 & mask;
        v.push(base);
        y.push(base.wrapping_add(d).wrapping_sub(k1 as u64) & mask);
    }
    chan.send(tag, &u64s(&y))?;
    Ok(v)
}

/// Correlated OT, receiver side.
pub fn cot_recv(
    chan: &mut dyn Transport,
    batch: &mut RotReceiverBatch,
    bits: &[u8],
    mask: u64,
    tag: Tag,
) -> Result<Vec<u64>, OtError> {
    let n = bits.len();
    let mut e = Vec::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    for (i, &b) in bits.iter().enumerate() {
        let (ei, k) = batch.correction(i, b)?;
        e.push(ei);
        keys.push(k);
    }
    chan.send(tag, &pack_bits(&e))?;
    let y = get_u64s(&chan.recv(tag)?, n)?;
    Ok(bits
        .iter()
        .zip(&keys)
        .zip(&y)
        .map(|((&b, &k), &yi)| {
            let h = k as u64 & mask;
            if b & 1 == 1 {
                h.wrapping_add(yi) & mask
            } else {
                h
            }
        })
        .collect())
}

fn one_of_n_tweak(bit: usize, v: usize) -> Block {
    ((bit as u128) << 32) | v as u128 | (0x4f4e_u128 << 64)
}

/// 1-out-of-2^k OT of `msg_bits`-wide messages built from `k` random OTs per
/// instance. `tables[j]` holds the `2^k` messages of instance `j`.
pub fn one_of_n_send(
    chan: &mut dyn Transport,
    batch: &mut RotSenderBatch,
    k: usize,
    tables: &[Vec<u8>],
    msg_bits: usize,
    tag: Tag,
) -> Result<(), OtError> {
    let count = tables.len();
    let n_msgs = 1usize << k;
    let e = unpack_bits(&chan.recv(tag)?, count * k)?;
    let msg_mask = ((1u16 << msg_bits) - 1) as u8;
    let mut out_bits = Vec::with_capacity(count * n_msgs * msg_bits);
    let mut permuted = vec![[0 as Block; 2]; k];
    for (j, table) in tables.iter().enumerate() {
        if table.len() != n_msgs {
            return Err(OtError::MessageLength);
        }
        for (bit, slot) in permuted.iter_mut().enumerate() {
            let (r0, r1) = batch.take(j * k + bit)?;
            let (k0, k1) = if e[j * k + bit] == 0 { (r0, r1) } else { (r1, r0) };
            *slot = [permute(k0), permute(k1)];
        }
        for (v, &m) in table.iter().enumerate() {
            let mut pad: Block = 0;
            for (bit, p) in permuted.iter().enumerate() {
                pad ^= tccr_from_permuted(p[(v >> bit) & 1], one_of_n_tweak(bit, v));
            }
            let y = (m ^ pad as u8) & msg_mask;
            for b in 0..msg_bits {
                out_bits.push((y >> b) & 1);
            }
        }
    }
    chan.send(tag, &pack_bits(&out_bits))?;
    Ok(())
}

/// 1-out-of-2^k OT, receiver side; `choices[j] < 2^k`.
pub fn one_of_n_recv(
    chan: &mut dyn Transport,
    batch: &mut RotReceiverBatch,
    k: usize,
    choices: &[u16],
    msg_bits: usize,
    tag: Tag,
) -> Result<Vec<u8>, OtError> {
    let count = choices.len();
    let n_msgs = 1usize << k;
    let mut e = Vec::with_capacity(count * k);
    let mut keys = Vec::with_capacity(count * k);
    for (j, &b) in choices.iter().enumerate() {
        for bit in 0..k {
            let (ei, key) = batch.correction(j * k + bit, ((b >> bit) & 1) as u8)?;
            e.push(ei);
            keys.push(key);
        }
    }
    chan.send(tag, &pack_bits(&e))?;
    let bits = unpack_bits(&chan.recv(tag)?, count * n_msgs * msg_bits)
        .map_err(|_| OtError::Transport(TransportError::malformed("1-of-N payload size")))?;
    let msg_mask = ((1u16 << msg_bits) - 1) as u8;
    Ok(choices
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let v = b as usize;
            let mut pad: Block = 0;
            for bit in 0..k {
                pad ^= tccr(keys[j * k + bit], one_of_n_tweak(bit, v));
            }
            let start = (j * n_msgs + v) * msg_bits;
            let mut y = 0u8;
            for bb in 0..msg_bits {
                y |= bits[start + bb] << bb;
            }
            (y ^ pad as u8) & msg_mask
        })
        .collect())
}
