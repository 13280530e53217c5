//! Exact floor division of shared signed values by a public integer, and the
//! truncation built on it.
//!
//! Shift the value into `[0, L)` with `u0 = x0 + L/2`, `u1 = x1` and let
//! `w = [u0 + u1 >= L]`. Writing `u_i = A_i*d + a_i`, `L = QL*d + RL` and
//! `L/2 = QH*d + RH`,
//!
//! `floor(signed(x)/d) = A0 + A1 - QH - QL*w + floor((a0 + a1 - RH - w*RL)/d)`.
//!
//! The last term lies in `{-2, -1, 0, 1}` and equals `-2 + sum_k [a0 + a1 >= c_w + k*d]`
//! for `k = -1, 0, 1`, with `c_w = RH + w*RL`.

use super::arith::b2a;
use super::compare::millionaire;
use super::triples::and_bits;
use super::{GadgetError, Party, TruncMode};
use crate::transport::Tag;

/// A vector of XOR-shared bits whose value may be public.
#[derive(Debug, Clone)]
enum Bits {
    Public(u8),
    Shared(Vec<u8>),
}

fn bits_for(v: u64) -> u32 {
    64 - v.leading_zeros()
}

/// Shares of `floor(signed(x) / divisor)`, exact for every ring element.
pub fn divide_public(p: &mut Party, x: &[u64], divisor: u64) -> Result<Vec<u64>, GadgetError> {
    if divisor == 0 {
        return Err(GadgetError::DivideByZero);
    }
    let l = p.ring.bits;
    let mask = p.ring.mask();
    if divisor > mask / 2 || divisor >= 1 << 60 {
        return Err(GadgetError::DivisorTooLarge(divisor));
    }
    let n = x.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = divisor;
    let big_l = 1u128 << l;
    let half = big_l / 2;
    let (ql, rl) = ((big_l / d as u128) as u64 & mask, (big_l % d as u128) as u64);
    let (qh, rh) = ((half / d as u128) as u64, (half % d as u128) as u64);
    let me0 = p.is_zero();

    let u: Vec<u64> = if me0 { x.iter().map(|&v| v.wrapping_add(half as u64) & mask).collect() } else { x.to_vec() };
    let w_in: Vec<u64> = if me0 { u.iter().map(|&v| mask - v).collect() } else { u.clone() };
    let w = millionaire(p, &w_in, l)?;

    let a: Vec<u64> = u.iter().map(|&v| v % d).collect();
    let big_a: Vec<u64> = u.iter().map(|&v| v / d).collect();

    // Classify the six thresholds; the shared ones are compared in one batch.
    let top = 2 * d as i128 - 2;
    let mut shared_t: Vec<i128> = Vec::new();
    let mut class = [[Bits::Public(0), Bits::Public(0)], [Bits::Public(0), Bits::Public(0)], [Bits::Public(0), Bits::Public(0)]];
    let mut slot = [[usize::MAX; 2]; 3];
    for (ki, k) in [-1i128, 0, 1].into_iter().enumerate() {
        for wv in 0..2 {
            let t = rh as i128 + wv as i128 * rl as i128 + k * d as i128;
            if t <= 0 {
                class[ki][wv] = Bits::Public(1);
            } else if t > top {
                class[ki][wv] = Bits::Public(0);
            } else {
                let pos = shared_t.iter().position(|&s| s == t).unwrap_or_else(|| {
                    shared_t.push(t);
                    shared_t.len() - 1
                });
                slot[ki][wv] = pos;
            }
        }
    }
    if !shared_t.is_empty() {
        // [a0 + a1 >= t] = 1 ^ [a0 + O < t - a1 + O], with O = 2d keeping both sides positive.
        let off = 2 * d as i128;
        let width = bits_for(5 * d);
        let inputs: Vec<u64> = shared_t
            .iter()
            .flat_map(|&t| {
                a.iter().map(move |&ai| if me0 { (ai as i128 + off) as u64 } else { (t - ai as i128 + off) as u64 })
            })
            .collect();
        let lt = millionaire(p, &inputs, width)?;
        for ki in 0..3 {
            for wv in 0..2 {
                if slot[ki][wv] != usize::MAX {
                    let s = slot[ki][wv];
                    class[ki][wv] = Bits::Shared(lt[s * n..(s + 1) * n].iter().map(|&b| b ^ me0 as u8).collect());
                }
            }
        }
    }

    // beta_k = beta(w=0) ^ (w & (beta(w=0) ^ beta(w=1))).
    let xor = |a: &Bits, b: &Bits| -> Bits {
        match (a, b) {
            (Bits::Public(x), Bits::Public(y)) => Bits::Public(x ^ y),
            (Bits::Public(c), Bits::Shared(s)) | (Bits::Shared(s), Bits::Public(c)) => {
                Bits::Shared(s.iter().map(|&v| v ^ (c & me0 as u8)).collect())
            }
            (Bits::Shared(s), Bits::Shared(t)) => Bits::Shared(s.iter().zip(t).map(|(a, b)| a ^ b).collect()),
        }
    };
    let deltas: Vec<Bits> = (0..3).map(|k| xor(&class[k][0], &class[k][1])).collect();
    let mut and_x = Vec::new();
    let mut and_y = Vec::new();
    for dk in &deltas {
        if let Bits::Shared(s) = dk {
            and_x.extend_from_slice(&w);
            and_y.extend_from_slice(s);
        }
    }
    let prods = and_bits(p, &and_x, &and_y, Tag::Div)?;
    let mut used = 0;
    let mut betas = Vec::with_capacity(3);
    for (k, dk) in deltas.iter().enumerate() {
        let w_and = match dk {
            Bits::Public(0) => Bits::Public(0),
            Bits::Public(_) => Bits::Shared(w.clone()),
            Bits::Shared(_) => {
                used += 1;
                Bits::Shared(prods[(used - 1) * n..used * n].to_vec())
            }
        };
        betas.push(xor(&class[k][0], &w_and));
    }

    // Convert w and the shared betas to arithmetic shares in one batch.
    let mut conv_bits = w.clone();
    for b in &betas {
        if let Bits::Shared(s) = b {
            conv_bits.extend_from_slice(s);
        }
    }
    let conv = b2a(p, &conv_bits, Tag::Div)?;
    let mut out: Vec<u64> = (0..n)
        .map(|i| {
            let mut v = big_a[i].wrapping_sub(ql.wrapping_mul(conv[i]));
            if me0 {
                v = v.wrapping_sub(qh).wrapping_sub(2);
            }
            v & mask
        })
        .collect();
    let mut idx = 1;
    for b in &betas {
        match b {
            Bits::Public(c) => {
                if me0 && *c == 1 {
                    for o in out.iter_mut() {
                        *o = o.wrapping_add(1) & mask;
                    }
                }
            }
            Bits::Shared(_) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = o.wrapping_add(conv[idx * n + i]) & mask;
                }
                idx += 1;
            }
        }
    }
    Ok(out)
}

/// Local share shift: party 0 computes `x0 >> s`, party 1 computes `-((-x1) >> s)`.
pub fn truncate_local(p: &Party, x: &[u64], shift: u32) -> Vec<u64> {
    let mask = p.ring.mask();
    if p.is_zero() {
        x.iter().map(|&v| (v & mask) >> shift).collect()
    } else {
        x.iter().map(|&v| ((v.wrapping_neg() & mask) >> shift).wrapping_neg() & mask).collect()
    }
}

/// Shares of `signed(x) >> shift` (floor), using the party's truncation mode.
pub fn truncate(p: &mut Party, x: &[u64], shift: u32) -> Result<Vec<u64>, GadgetError> {
    if shift == 0 {
        return Ok(x.to_vec());
    }
    match p.trunc {
        TruncMode::Faithful => divide_public(p, x, 1u64 << shift),
        TruncMode::Local => Ok(truncate_local(p, x, shift)),
    }
}
