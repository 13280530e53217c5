//! Boolean and arithmetic multiplication triples, AND gates and Beaver multiplication.

use serde::{Deserialize, Serialize};

use super::{check_len, GadgetError, Party};
use crate::ot::rot::{cot_recv, cot_send};
use crate::sharing::PartyId;
use crate::transport::codec::{get_u64s, pack_bits, u64s, unpack_bits};
use crate::transport::Tag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripleBackend {
    /// Correlations from the shared-seed dealer.
    Dealer,
    /// Cross terms from `l` correlated OTs each.
    OtGilboa,
}

/// This party's shares of `n` arithmetic triples `c = a * b`, each usable once.
#[derive(Debug, Clone)]
pub struct BeaverTriples {
    pub a: Vec<u64>,
    pub b: Vec<u64>,
    pub c: Vec<u64>,
    used: Vec<bool>,
}

impl BeaverTriples {
    pub fn new(a: Vec<u64>, b: Vec<u64>, c: Vec<u64>) -> Self {
        let used = vec![false; a.len()];
        Self { a, b, c, used }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn take(&mut self, i: usize) -> Result<(u64, u64, u64), GadgetError> {
        let used = self.used.get_mut(i).ok_or(GadgetError::TriplesExhausted)?;
        if *used {
            return Err(GadgetError::TripleReused(i));
        }
        *used = true;
        Ok((self.a[i], self.b[i], self.c[i]))
    }
}

/// XOR-shared AND triples: `(a, b, c)` with `c = a & b` after reconstruction.
pub fn gen_bit_triples(p: &mut Party, n: usize) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), GadgetError> {
    if let Some(dealer) = p.ot.as_dealer() {
        return Ok(dealer.bit_triples(n));
    }
    // One random OT per direction. As sender, x = lsb(r0) ^ lsb(r1) and u = lsb(r0);
    // the receiver's v = lsb(r_c) satisfies v = u ^ (c & x).
    let chan = p.chan.as_mut();
    let (mut sent, mut recvd) = if p.id == PartyId::Zero {
        let s = p.ot.random_send(chan, n)?;
        (s, p.ot.random_recv(chan, n)?)
    } else {
        let r = p.ot.random_recv(chan, n)?;
        (p.ot.random_send(chan, n)?, r)
    };
    let (mut a, mut b, mut c) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (r0, r1) = sent.take(i)?;
        let x = ((r0 ^ r1) & 1) as u8;
        let u = (r0 & 1) as u8;
        let (choice, key) = recvd.take(i)?;
        let v = (key & 1) as u8;
        a.push(choice);
        b.push(x);
        c.push((choice & x) ^ u ^ v);
    }
    Ok((a, b, c))
}

/// XOR shares of `x & y`, elementwise.
pub fn and_bits(p: &mut Party, x: &[u8], y: &[u8], tag: Tag) -> Result<Vec<u8>, GadgetError> {
    check_len(x.len(), y.len())?;
    let n = x.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (a, b, c) = gen_bit_triples(p, n)?;
    let mut open: Vec<u8> = x.iter().zip(&a).map(|(x, a)| x ^ a).collect();
    open.extend(y.iter().zip(&b).map(|(y, b)| y ^ b));
    let theirs = unpack_bits(&p.exchange(tag, &pack_bits(&open))?, 2 * n)?;
    let me0 = p.is_zero() as u8;
    Ok((0..n)
        .map(|i| {
            let d = open[i] ^ theirs[i];
            let e = open[n + i] ^ theirs[n + i];
            c[i] ^ (d & b[i]) ^ (e & a[i]) ^ (me0 & d & e)
        })
        .collect())
}

/// Shares of `mine_a * their_b` for the cross term where this party holds `a`
/// (as COT sender) or `b` (as receiver), over `l` correlated OTs per element.
fn gilboa_sender(p: &mut Party, a: &[u64]) -> Result<Vec<u64>, GadgetError> {
    let l = p.ring.bits as usize;
    let mask = p.ring.mask();
    let mut batch = p.ot.random_send(p.chan.as_mut(), a.len() * l)?;
    let deltas: Vec<u64> = a.iter().flat_map(|&ai| (0..l).map(move |k| (ai << k) & mask)).collect();
    let v = cot_send(p.chan.as_mut(), &mut batch, &deltas, mask, Tag::Trip)?;
    Ok(v.chunks(l).map(|vs| vs.iter().fold(0u64, |acc, &x| acc.wrapping_sub(x)) & mask).collect())
}

fn gilboa_receiver(p: &mut Party, b: &[u64]) -> Result<Vec<u64>, GadgetError> {
    let l = p.ring.bits as usize;
    let mask = p.ring.mask();
    let mut batch = p.ot.random_recv(p.chan.as_mut(), b.len() * l)?;
    let bits: Vec<u8> = b.iter().flat_map(|&bi| (0..l).map(move |k| ((bi >> k) & 1) as u8)).collect();
    let w = cot_recv(p.chan.as_mut(), &mut batch, &bits, mask, Tag::Trip)?;
    Ok(w.chunks(l).map(|ws| ws.iter().fold(0u64, |acc, &x| acc.wrapping_add(x)) & mask).collect())
}

pub fn gen_triples(p: &mut Party, n: usize) -> Result<BeaverTriples, GadgetError> {
    let mask = p.ring.mask();
    if p.triples == TripleBackend::Dealer {
        if let Some(dealer) = p.ot.as_dealer() {
            let t = dealer.arith_triples(n, mask);
            return Ok(BeaverTriples::new(
                t.iter().map(|x| x[0]).collect(),
                t.iter().map(|x| x[1]).collect(),
                t.iter().map(|x| x[2]).collect(),
            ));
        }
    }
    let a = p.random_words(n);
    let b = p.random_words(n);
    // Cross term a0*b1 first (party 0 sends), then a1*b0.
    let (x, y) = if p.is_zero() {
        let x = gilboa_sender(p, &a)?;
        (x, gilboa_receiver(p, &b)?)
    } else {
        let x = gilboa_receiver(p, &b)?;
        (x, gilboa_sender(p, &a)?)
    };
    let c = (0..n).map(|i| a[i].wrapping_mul(b[i]).wrapping_add(x[i]).wrapping_add(y[i]) & mask).collect();
    Ok(BeaverTriples::new(a, b, c))
}

/// Shares of `x * y mod 2^l`; opens `x - a` and `y - b` (two words per party).
pub fn secure_mul(p: &mut Party, x: &[u64], y: &[u64]) -> Result<Vec<u64>, GadgetError> {
    check_len(x.len(), y.len())?;
    let n = x.len();
    let mut triples = gen_triples(p, n)?;
    let mask = p.ring.mask();
    let mut open = Vec::with_capacity(2 * n);
    let mut taken = Vec::with_capacity(n);
    for i in 0..n {
        let t = triples.take(i)?;
        open.push(x[i].wrapping_sub(t.0) & mask);
        open.push(y[i].wrapping_sub(t.1) & mask);
        taken.push(t);
    }
    let theirs = get_u64s(&p.exchange(Tag::Mult, &u64s(&open))?, 2 * n)?;
    let me0 = p.is_zero();
    Ok((0..n)
        .map(|i| {
            let (a, b, c) = taken[i];
            let e = open[2 * i].wrapping_add(theirs[2 * i]);
            let f = open[2 * i + 1].wrapping_add(theirs[2 * i + 1]);
            let mut z = c.wrapping_add(e.wrapping_mul(b)).wrapping_add(f.wrapping_mul(a));
            if me0 {
                z = z.wrapping_add(e.wrapping_mul(f));
            }
            z & mask
        })
        .collect())
}
