//! Fixed-key AES primitives: a tweakable correlation-robust hash and a seeded PRG.

use std::sync::OnceLock;

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub type Block = u128;

const FIXED_KEY: [u8; 16] = *b"privinfer-ot-key";

fn cipher() -> &'static Aes128 {
    static CIPHER: OnceLock<Aes128> = OnceLock::new();
    CIPHER.get_or_init(|| Aes128::new(GenericArray::from_slice(&FIXED_KEY)))
}

/// The fixed-key permutation `pi`.
#[inline]
pub fn permute(x: Block) -> Block {
    let mut b = GenericArray::clone_from_slice(&x.to_le_bytes());
    cipher().encrypt_block(&mut b);
    u128::from_le_bytes(b.into())
}

/// Permutes a slice in place, letting the cipher pipeline blocks.
pub fn permute_many(xs: &mut [Block]) {
    const CHUNK: usize = 64;
    let c = cipher();
    let mut buf = [GenericArray::default(); CHUNK];
    for chunk in xs.chunks_mut(CHUNK) {
        for (slot, x) in buf.iter_mut().zip(chunk.iter()) {
            *slot = GenericArray::clone_from_slice(&x.to_le_bytes());
        }
        c.encrypt_blocks(&mut buf[..chunk.len()]);
        for (slot, x) in buf.iter().zip(chunk.iter_mut()) {
            *x = u128::from_le_bytes((*slot).into());
        }
    }
}

/// `H(x, t) = pi(pi(x) ^ t) ^ pi(x)`.
#[inline]
pub fn tccr(x: Block, tweak: Block) -> Block {
    let p = permute(x);
    permute(p ^ tweak) ^ p
}

/// Second half of [`tccr`] when `pi(x)` is already known.
#[inline]
pub fn tccr_from_permuted(px: Block, tweak: Block) -> Block {
    permute(px ^ tweak) ^ px
}

/// Hashes many `(x, tweak)` pairs.
pub fn tccr_many(xs: &[Block], tweaks: impl Fn(usize) -> Block) -> Vec<Block> {
    let mut p = xs.to_vec();
    permute_many(&mut p);
    let mut q: Vec<Block> = p.iter().enumerate().map(|(i, &v)| v ^ tweaks(i)).collect();
    permute_many(&mut q);
    q.iter().zip(&p).map(|(a, b)| a ^ b).collect()
}

/// Deterministic stream expanded from a block seed.
pub struct Prg(ChaCha12Rng);

impl Prg {
    pub fn new(seed: Block) -> Self {
        let mut s = [0u8; 32];
        s[..16].copy_from_slice(&seed.to_le_bytes());
        s[16..].copy_from_slice(b"privinfer-prg-v1");
        Prg(ChaCha12Rng::from_seed(s))
    }

    pub fn fill(&mut self, out: &mut [u8]) {
        self.0.fill_bytes(out);
    }
}
