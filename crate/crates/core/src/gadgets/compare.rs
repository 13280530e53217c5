//! Millionaires' comparison over 4-bit chunks and the sign test built on it.

use super::triples::and_bits;
use super::{BoolShare, GadgetError, Party};
use crate::ot::rot::{one_of_n_recv, one_of_n_send};
use crate::transport::Tag;

const CHUNK: u32 = 4;

/// XOR shares of `[a < b]`, where party 0 supplies `a` and party 1 supplies `b`,
/// both below `2^bits`.
///
/// Each chunk is compared with one 1-out-of-16 OT that hands the receiver shares
/// of the chunk's `lt` and `eq` bits; chunks are then merged pairwise with
/// `lt = lt_hi ^ (eq_hi & lt_lo)` and `eq = eq_hi & eq_lo`.
pub fn millionaire(p: &mut Party, inputs: &[u64], bits: u32) -> Result<Vec<u8>, GadgetError> {
    let n = inputs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    if bits == 0 {
        return Ok(vec![0; n]);
    }
    let chunks = bits.div_ceil(CHUNK) as usize;
    let widths: Vec<u32> = (0..chunks as u32).map(|j| CHUNK.min(bits - j * CHUNK)).collect();
    // lt[j * n + e], eq[j * n + e]
    let mut lt = vec![0u8; chunks * n];
    let mut eq = vec![0u8; chunks * n];

    // Full-width chunks in one batch, then the narrower top chunk if any.
    let full = widths.iter().take_while(|&&w| w == CHUNK).count();
    let groups: Vec<(usize, usize, u32)> = if full == chunks {
        vec![(0, chunks, CHUNK)]
    } else if full == 0 {
        vec![(0, chunks, widths[0])]
    } else {
        vec![(0, full, CHUNK), (full, chunks, widths[full])]
    };
    for (start, end, k) in groups {
        let count = (end - start) * n;
        let digit_mask = (1u64 << k) - 1;
        let ku = k as usize;
        if p.is_zero() {
            let mut batch = p.ot.random_send(p.chan.as_mut(), count * ku)?;
            let mut tables = Vec::with_capacity(count);
            for j in start..end {
                for (e, &a) in inputs.iter().enumerate() {
                    let digit = (a >> (CHUNK as usize * j)) & digit_mask;
                    let r: u32 = rand::Rng::gen(&mut p.rng);
                    let (r_lt, r_eq) = ((r & 1) as u8, ((r >> 1) & 1) as u8);
                    lt[j * n + e] = r_lt;
                    eq[j * n + e] = r_eq;
                    tables.push(
                        (0..=digit_mask)
                            .map(|v| (((digit < v) as u8) ^ r_lt) | ((((digit == v) as u8) ^ r_eq) << 1))
                            .collect(),
                    );
                }
            }
            one_of_n_send(p.chan.as_mut(), &mut batch, ku, &tables, 2, Tag::Cmp)?;
        } else {
            let mut batch = p.ot.random_recv(p.chan.as_mut(), count * ku)?;
            let choices: Vec<u16> = (start..end)
                .flat_map(|j| inputs.iter().map(move |&b| ((b >> (CHUNK as usize * j)) & digit_mask) as u16))
                .collect();
            let got = one_of_n_recv(p.chan.as_mut(), &mut batch, ku, &choices, 2, Tag::Cmp)?;
            for (idx, m) in got.into_iter().enumerate() {
                lt[start * n + idx] = m & 1;
                eq[start * n + idx] = (m >> 1) & 1;
            }
        }
    }

    let mut nodes = chunks;
    while nodes > 1 {
        let pairs = nodes / 2;
        let next = pairs + nodes % 2;
        let need_eq = next > 1;
        let mut x = Vec::with_capacity(2 * pairs * n);
        let mut y = Vec::with_capacity(2 * pairs * n);
        for i in 0..pairs {
            let (lo, hi) = (2 * i, 2 * i + 1);
            x.extend_from_slice(&eq[hi * n..(hi + 1) * n]);
            y.extend_from_slice(&lt[lo * n..(lo + 1) * n]);
        }
        if need_eq {
            for i in 0..pairs {
                let (lo, hi) = (2 * i, 2 * i + 1);
                x.extend_from_slice(&eq[hi * n..(hi + 1) * n]);
                y.extend_from_slice(&eq[lo * n..(lo + 1) * n]);
            }
        }
        let z = and_bits(p, &x, &y, Tag::Cmp)?;
        let mut new_lt = vec![0u8; next * n];
        let mut new_eq = vec![0u8; next * n];
        for i in 0..pairs {
            let hi = 2 * i + 1;
            for e in 0..n {
                new_lt[i * n + e] = lt[hi * n + e] ^ z[i * n + e];
                if need_eq {
                    new_eq[i * n + e] = z[(pairs + i) * n + e];
                }
            }
        }
        if nodes % 2 == 1 {
            let last = nodes - 1;
            new_lt[pairs * n..].copy_from_slice(&lt[last * n..(last + 1) * n]);
            new_eq[pairs * n..].copy_from_slice(&eq[last * n..(last + 1) * n]);
        }
        lt = new_lt;
        eq = new_eq;
        nodes = next;
    }
    lt.truncate(n);
    Ok(lt)
}

/// XOR shares of `d = [signed(x) >= 0]`.
///
/// With `x' = x mod 2^(l-1)`, the MSB of `x0 + x1` is `msb(x0) ^ msb(x1) ^ carry`,
/// where `carry = [2^(l-1) - 1 - x0' < x1']`.
pub fn positive(p: &mut Party, x: &[u64]) -> Result<BoolShare, GadgetError> {
    let l = p.ring.bits;
    let low = (1u64 << (l - 1)) - 1;
    let inputs: Vec<u64> = if p.is_zero() { x.iter().map(|&v| low - (v & low)).collect() } else { x.iter().map(|&v| v & low).collect() };
    let carry = millionaire(p, &inputs, l - 1)?;
    let flip = p.is_zero() as u8;
    let bits = x.iter().zip(carry).map(|(&v, c)| ((v >> (l - 1)) & 1) as u8 ^ c ^ flip).collect();
    Ok(BoolShare { party: p.id, bits })
}
