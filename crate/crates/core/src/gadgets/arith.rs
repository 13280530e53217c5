//! Boolean-by-arithmetic products: multiplexing, bit-to-ring conversion, ReLU.

use super::compare::positive;
use super::{check_len, GadgetError, Party};
use crate::ot::rot::{chosen_recv, chosen_send, cot_recv, cot_send};
use crate::sharing::PartyId;
use crate::transport::Tag;

/// Shares of `d ? x : 0` from XOR-shared `d`, with one chosen OT per direction.
///
/// For the term `d * x_i`, party `i` offers `((j ^ d_i) * x_i - r, j = 0, 1)`
/// and keeps `r`; the other party selects with its own bit of `d`.
pub fn mux(p: &mut Party, d: &[u8], x: &[u64]) -> Result<Vec<u64>, GadgetError> {
    check_len(d.len(), x.len())?;
    let n = x.len();
    let mask = p.ring.mask();
    let mut out = vec![0u64; n];
    for sender in [PartyId::Zero, PartyId::One] {
        if p.id == sender {
            let mut batch = p.ot.random_send(p.chan.as_mut(), n)?;
            let r = p.random_words(n);
            let msgs: Vec<[u64; 2]> = (0..n)
                .map(|i| {
                    let xi = x[i];
                    let pick = |j: u8| if (j ^ d[i]) & 1 == 1 { xi.wrapping_sub(r[i]) } else { r[i].wrapping_neg() };
                    [pick(0) & mask, pick(1) & mask]
                })
                .collect();
            chosen_send(p.chan.as_mut(), &mut batch, &msgs, mask, Tag::Mux)?;
            for (o, ri) in out.iter_mut().zip(&r) {
                *o = o.wrapping_add(*ri) & mask;
            }
        } else {
            let mut batch = p.ot.random_recv(p.chan.as_mut(), n)?;
            let got = chosen_recv(p.chan.as_mut(), &mut batch, d, mask, Tag::Mux)?;
            for (o, g) in out.iter_mut().zip(&got) {
                *o = o.wrapping_add(*g) & mask;
            }
        }
    }
    Ok(out)
}

/// Arithmetic shares of XOR-shared bits: `b = b0 + b1 - 2*b0*b1`, with the cross
/// product from one correlated OT.
pub fn b2a(p: &mut Party, bits: &[u8], tag: Tag) -> Result<Vec<u64>, GadgetError> {
    let n = bits.len();
    let mask = p.ring.mask();
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_zero() {
        let mut batch = p.ot.random_send(p.chan.as_mut(), n)?;
        let deltas: Vec<u64> = bits.iter().map(|&b| (b & 1) as u64).collect();
        let v = cot_send(p.chan.as_mut(), &mut batch, &deltas, mask, tag)?;
        Ok(deltas.iter().zip(&v).map(|(&b, &v)| b.wrapping_add(v.wrapping_mul(2)) & mask).collect())
    } else {
        let mut batch = p.ot.random_recv(p.chan.as_mut(), n)?;
        let w = cot_recv(p.chan.as_mut(), &mut batch, bits, mask, tag)?;
        Ok(bits.iter().zip(&w).map(|(&b, &w)| ((b & 1) as u64).wrapping_sub(w.wrapping_mul(2)) & mask).collect())
    }
}

/// Shares of `max(signed(x), 0)`.
pub fn relu(p: &mut Party, x: &[u64]) -> Result<Vec<u64>, GadgetError> {
    let d = positive(p, x)?;
    mux(p, &d.bits, x)
}
