//! Base 1-out-of-2 OT from Diffie-Hellman over Ristretto (Chou-Orlandi style).
//!
//! Sender publishes `A = aG`. Receiver with choice `c` answers `B = bG + cA`.
//! The sender derives `k0 = H(aB)` and `k1 = H(a(B - A))`; the receiver can only
//! derive `k_c = H(bA)`. `B` is uniform whatever `c` is.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::hash::Block;
use super::OtError;
use crate::transport::{Tag, Transport, TransportError};

const POINT_LEN: usize = 32;

fn random_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    let mut wide = [0u8; 64];
    rng.fill_bytes(&mut wide);
    Scalar::from_bytes_mod_order_wide(&wide)
}

fn derive_key(a: &RistrettoPoint, b: &CompressedRistretto, shared: &RistrettoPoint, index: usize) -> Block {
    let mut h = Sha256::new();
    h.update(b"privinfer-base-ot");
    h.update(a.compress().as_bytes());
    h.update(b.as_bytes());
    h.update(shared.compress().as_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u128::from_le_bytes(digest[..16].try_into().unwrap())
}

fn decompress(bytes: &[u8]) -> Result<(CompressedRistretto, RistrettoPoint), OtError> {
    let c = CompressedRistretto::from_slice(bytes).map_err(|_| OtError::InvalidPoint)?;
    let p = c.decompress().ok_or(OtError::InvalidPoint)?;
    Ok((c, p))
}

/// Sender side of `n` random base OTs; returns both keys of every instance.
pub fn random_base_ot_send<R: RngCore + CryptoRng>(
    chan: &mut dyn Transport,
    rng: &mut R,
    n: usize,
) -> Result<Vec<(Block, Block)>, OtError> {
    let a = random_scalar(rng);
    let big_a = &a * RISTRETTO_BASEPOINT_TABLE;
    chan.send(Tag::OtSetup, big_a.compress().as_bytes())?;
    let payload = chan.recv(Tag::OtSetup)?;
    if payload.len() != n * POINT_LEN {
        return Err(TransportError::malformed("base OT receiver message length").into());
    }
    payload
        .chunks_exact(POINT_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            let (cb, b) = decompress(chunk)?;
            let k0 = derive_key(&big_a, &cb, &(a * b), i);
            let k1 = derive_key(&big_a, &cb, &(a * (b - big_a)), i);
            Ok((k0, k1))
        })
        .collect()
}

/// Receiver side of random base OTs; returns `k_{c_i}` for each choice.
pub fn random_base_ot_recv<R: RngCore + CryptoRng>(
    chan: &mut dyn Transport,
    rng: &mut R,
    choices: &[bool],
) -> Result<Vec<Block>, OtError> {
    let payload = chan.recv(Tag::OtSetup)?;
    if payload.len() != POINT_LEN {
        return Err(TransportError::malformed("base OT sender message length").into());
    }
    let (_, big_a) = decompress(&payload)?;
    let mut out_points = Vec::with_capacity(choices.len() * POINT_LEN);
    let mut keys = Vec::with_capacity(choices.len());
    for (i, &c) in choices.iter().enumerate() {
        let b = random_scalar(rng);
        let mut big_b = &b * RISTRETTO_BASEPOINT_TABLE;
        if c {
            big_b += big_a;
        }
        let cb = big_b.compress();
        out_points.extend_from_slice(cb.as_bytes());
        keys.push(derive_key(&big_a, &cb, &(b * big_a), i));
    }
    chan.send(Tag::OtSetup, &out_points)?;
    Ok(keys)
}

fn keystream(key: Block, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut ctr = 0u64;
    while out.len() < len {
        let mut h = Sha256::new();
        h.update(key.to_le_bytes());
        h.update(ctr.to_le_bytes());
        out.extend_from_slice(&h.finalize());
        ctr += 1;
    }
    out.truncate(len);
    out
}

fn xor_into(dst: &mut [u8], key: &[u8]) {
    for (d, k) in dst.iter_mut().zip(key) {
        *d ^= k;
    }
}

/// Chosen-message base OT, sender side. Messages of a pair must have equal length.
pub fn base_ot_send<R: RngCore + CryptoRng>(
    chan: &mut dyn Transport,
    rng: &mut R,
    messages: &[(Vec<u8>, Vec<u8>)],
) -> Result<(), OtError> {
    let keys = random_base_ot_send(chan, rng, messages.len())?;
    let mut out = Vec::new();
    for ((m0, m1), (k0, k1)) in messages.iter().zip(&keys) {
        if m0.len() != m1.len() {
            return Err(OtError::MessageLength);
        }
        out.extend_from_slice(&(m0.len() as u32).to_le_bytes());
        let mut e0 = m0.clone();
        xor_into(&mut e0, &keystream(*k0, m0.len()));
        let mut e1 = m1.clone();
        xor_into(&mut e1, &keystream(*k1, m1.len()));
        out.extend_from_slice(&e0);
        out.extend_from_slice(&e1);
    }
    chan.send(Tag::OtCorrection, &out)?;
    Ok(())
}

/// Chosen-message base OT, receiver side.
pub fn base_ot_recv<R: RngCore + CryptoRng>(
    chan: &mut dyn Transport,
    rng: &mut R,
    choices: &[bool],
) -> Result<Vec<Vec<u8>>, OtError> {
    let keys = random_base_ot_recv(chan, rng, choices)?;
    let payload = chan.recv(Tag::OtCorrection)?;
    let mut pos = 0usize;
    let mut out = Vec::with_capacity(choices.len());
    for (&c, key) in choices.iter().zip(&keys) {
        let len_bytes = payload.get(pos..pos + 4).ok_or(OtError::MessageLength)?;
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 4;
        let start = pos + if c { len } else { 0 };
        let mut m = payload.get(start..start + len).ok_or(OtError::MessageLength)?.to_vec();
        xor_into(&mut m, &keystream(*key, len));
        out.push(m);
        pos += 2 * len;
    }
    if pos != payload.len() {
        return Err(OtError::MessageLength);
    }
    Ok(out)
}
