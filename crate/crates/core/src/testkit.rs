//! In-process two-party harness used by the test suites and benchmarks.

use std::thread;

use crate::gadgets::Party;
use crate::ot::{make_backend, OtKind};
use crate::ring::RingConfig;
use crate::sharing::PartyId;
use crate::transport::memory_channel_pair;

/// Two parties joined by an in-memory authenticated channel. Both sides derive
/// their randomness from `seed`; the dealer backend shares it.
pub fn party_pair(ring: RingConfig, ot: OtKind, seed: u64) -> (Party, Party) {
    let (c0, c1) = memory_channel_pair([0x5a; 16], [0x42; 32]);
    let p0 = Party::new(PartyId::Zero, ring, Box::new(c0), make_backend(ot, PartyId::Zero, Some(seed)), Some(seed));
    let p1 = Party::new(PartyId::One, ring, Box::new(c1), make_backend(ot, PartyId::One, Some(seed)), Some(seed));
    (p0, p1)
}

/// Runs `f0` on party 0 in a helper thread and `f1` on party 1 in the caller.
pub fn run_pair<A, B, F0, F1>(p0: &mut Party, p1: &mut Party, f0: F0, f1: F1) -> (A, B)
where
    A: Send,
    F0: FnOnce(&mut Party) -> A + Send,
    F1: FnOnce(&mut Party) -> B,
{
    thread::scope(|s| {
        let h = s.spawn(move || f0(p0));
        let b = f1(p1);
        (h.join().expect("party 0 panicked"), b)
    })
}

/// Splits `values` into random shares `(s0, s1)` with `s0 + s1 = v mod 2^l`.
pub fn split(ring: RingConfig, values: &[u64], rng: &mut impl rand::RngCore) -> (Vec<u64>, Vec<u64>) {
    let mask = ring.mask();
    let s1: Vec<u64> = values.iter().map(|_| rng.next_u64() & mask).collect();
    let s0 = values.iter().zip(&s1).map(|(&v, &r)| v.wrapping_sub(r) & mask).collect();
    (s0, s1)
}

pub fn join(ring: RingConfig, s0: &[u64], s1: &[u64]) -> Vec<u64> {
    s0.iter().zip(s1).map(|(&a, &b)| ring.add(a, b)).collect()
}
