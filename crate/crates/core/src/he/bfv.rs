//! BFV-style encryption with ciphertext addition and plaintext multiplication.
//!
//! Ciphertexts are `(c0, c1)` with `c0 + c1*s = Delta*m + e (mod q)`, `Delta = (q-1)/t`.
//! Polynomials live in RNS form, one residue vector per prime limb.

use std::sync::Arc;

use rand::RngCore;

use super::ntt::{inv_mod, mul_mod, NttTable};
use super::params::HeParams;
use super::HeError;

/// Centered binomial parameter for error sampling (variance `ETA / 2`).
const ETA: u32 = 21;
/// Tail factor applied to standard deviations in the static noise estimate.
const TAIL: f64 = 7.0;

/// A polynomial with coefficients in `[0, t)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plaintext {
    pub coeffs: Vec<u64>,
}

impl Plaintext {
    pub fn zero(n: usize) -> Self {
        Self { coeffs: vec![0; n] }
    }

    pub fn new(coeffs: Vec<u64>) -> Self {
        Self { coeffs }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RnsPoly {
    pub(crate) limbs: Vec<Vec<u64>>,
}

impl RnsPoly {
    fn zero(limbs: usize, n: usize) -> Self {
        Self { limbs: vec![vec![0; n]; limbs] }
    }

    fn add_assign(&mut self, other: &RnsPoly, primes: &[u64]) {
        for ((a, b), &p) in self.limbs.iter_mut().zip(&other.limbs).zip(primes) {
            for (x, &y) in a.iter_mut().zip(b) {
                let s = *x + y;
                *x = if s >= p { s - p } else { s };
            }
        }
    }

    fn mul_pointwise(&self, other: &RnsPoly, primes: &[u64]) -> RnsPoly {
        RnsPoly {
            limbs: self
                .limbs
                .iter()
                .zip(&other.limbs)
                .zip(primes)
                .map(|((a, b), &p)| a.iter().zip(b).map(|(&x, &y)| mul_mod(x, y, p)).collect())
                .collect(),
        }
    }
}

/// Precomputed tables and constants for one parameter set.
#[derive(Debug)]
pub struct HeContext {
    params: HeParams,
    digest: [u8; 32],
    tables: Vec<NttTable>,
    q: u128,
    delta: u128,
    delta_mod: Vec<u64>,
    /// `(prod_{j<i} p_j)^{-1} mod p_i`, for mixed-radix reconstruction.
    garner_inv: Vec<u64>,
    /// `prod_{j<i} p_j` as u128.
    prefix: Vec<u128>,
}

#[derive(Debug, Clone)]
pub struct SecretKey {
    digest: [u8; 32],
    s_ntt: RnsPoly,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    digest: [u8; 32],
    p0_ntt: RnsPoly,
    p1_ntt: RnsPoly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ciphertext {
    digest: [u8; 32],
    c0: RnsPoly,
    c1: RnsPoly,
    depth: u32,
    /// log2 of the estimated bound on the noise magnitude.
    noise_log2: f64,
}

/// Ciphertext kept in the evaluation (NTT) domain, for accumulating products.
#[derive(Debug, Clone)]
pub struct NttCiphertext {
    c0: RnsPoly,
    c1: RnsPoly,
    depth: u32,
    noise_log2: f64,
}

/// Plaintext lifted to `(-t/2, t/2]` and transformed, ready for multiplication.
#[derive(Debug, Clone)]
pub struct PreparedPlaintext {
    poly: RnsPoly,
    norm: f64,
    nonzero: usize,
}

fn log2_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (1.0 + (lo - hi).exp2()).log2()
}

impl HeContext {
    pub fn new(params: HeParams) -> Result<Arc<Self>, HeError> {
        params.validate()?;
        let n = params.poly_degree;
        let tables = params
            .primes
            .iter()
            .map(|&p| NttTable::new(p, n).ok_or_else(|| HeError::InvalidParams(format!("no NTT for limb {p}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let q = params.q();
        let t = params.plain_modulus() as u128;
        let delta = (q - 1) / t;
        let delta_mod = params.primes.iter().map(|&p| (delta % p as u128) as u64).collect();
        let mut prefix = Vec::with_capacity(params.primes.len());
        let mut garner_inv = Vec::with_capacity(params.primes.len());
        let mut acc = 1u128;
        for &p in &params.primes {
            prefix.push(acc);
            garner_inv.push(inv_mod((acc % p as u128) as u64, p));
            acc *= p as u128;
        }
        Ok(Arc::new(Self { digest: params.digest(), params, tables, q, delta, delta_mod, garner_inv, prefix }))
    }

    pub fn params(&self) -> &HeParams {
        &self.params
    }

    pub fn degree(&self) -> usize {
        self.params.poly_degree
    }

    pub fn plain_modulus(&self) -> u64 {
        self.params.plain_modulus()
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    fn primes(&self) -> &[u64] {
        &self.params.primes
    }

    /// log2 of `Delta / 2`, the largest tolerable noise.
    pub fn noise_capacity_log2(&self) -> f64 {
        (self.delta as f64).log2() - 1.0
    }

    pub fn noise_budget(&self, ct: &Ciphertext) -> f64 {
        self.noise_capacity_log2() - ct.noise_log2
    }

    fn fresh_noise_log2(&self) -> f64 {
        let var = ETA as f64 / 2.0;
        let n = self.degree() as f64;
        (TAIL * (var * (4.0 * n / 3.0 + 1.0)).sqrt()).log2()
    }

    fn from_signed(&self, v: &[i64]) -> RnsPoly {
        RnsPoly {
            limbs: self
                .primes()
                .iter()
                .map(|&p| v.iter().map(|&x| if x >= 0 { x as u64 % p } else { p - ((-x) as u64 % p) }).collect())
                .collect(),
        }
    }

    fn forward(&self, poly: &mut RnsPoly) {
        for (limb, table) in poly.limbs.iter_mut().zip(&self.tables) {
            table.forward(limb);
        }
    }

    fn inverse(&self, poly: &mut RnsPoly) {
        for (limb, table) in poly.limbs.iter_mut().zip(&self.tables) {
            table.inverse(limb);
        }
    }

    fn sample_ternary(&self, rng: &mut (impl RngCore + ?Sized)) -> Vec<i64> {
        (0..self.degree())
            .map(|_| loop {
                // Rejection keeps the three outcomes equally likely.
                let b = rng.next_u32() & 3;
                if b < 3 {
                    break b as i64 - 1;
                }
            })
            .collect()
    }

    fn sample_error(&self, rng: &mut (impl RngCore + ?Sized)) -> Vec<i64> {
        let mask = (1u64 << ETA) - 1;
        (0..self.degree())
            .map(|_| {
                let w = rng.next_u64();
                (w & mask).count_ones() as i64 - ((w >> 32) & mask).count_ones() as i64
            })
            .collect()
    }

    fn check(&self, digest: &[u8; 32]) -> Result<(), HeError> {
        if *digest != self.digest {
            return Err(HeError::ParamsMismatch);
        }
        Ok(())
    }

    fn check_plain(&self, pt: &Plaintext) -> Result<(), HeError> {
        let t = self.plain_modulus();
        if pt.coeffs.len() != self.degree() || pt.coeffs.iter().any(|&c| c >= t) {
            return Err(HeError::InvalidPlaintext);
        }
        Ok(())
    }

    pub fn keygen(&self, rng: &mut (impl RngCore + ?Sized)) -> (PublicKey, SecretKey) {
        let mut s = self.from_signed(&self.sample_ternary(rng));
        self.forward(&mut s);
        let a = RnsPoly {
            limbs: self
                .primes()
                .iter()
                .map(|&p| {
                    (0..self.degree())
                        .map(|_| loop {
                            // Rejection sampling for a uniform residue.
                            let zone = u64::MAX - u64::MAX % p;
                            let x = rng.next_u64();
                            if x < zone {
                                break x % p;
                            }
                        })
                        .collect()
                })
                .collect(),
        };
        // a is sampled directly in the evaluation domain; the NTT is a bijection.
        let mut e = self.from_signed(&self.sample_error(rng));
        self.forward(&mut e);
        let mut as_e = a.mul_pointwise(&s, self.primes());
        as_e.add_assign(&e, self.primes());
        let p0 = RnsPoly {
            limbs: as_e
                .limbs
                .iter()
                .zip(self.primes())
                .map(|(l, &p)| l.iter().map(|&x| if x == 0 { 0 } else { p - x }).collect())
                .collect(),
        };
        (
            PublicKey { digest: self.digest, p0_ntt: p0, p1_ntt: a },
            SecretKey { digest: self.digest, s_ntt: s },
        )
    }

    pub fn encrypt(&self, pk: &PublicKey, pt: &Plaintext, rng: &mut (impl RngCore + ?Sized)) -> Result<Ciphertext, HeError> {
        self.check(&pk.digest)?;
        self.check_plain(pt)?;
        let mut u = self.from_signed(&self.sample_ternary(rng));
        self.forward(&mut u);
        let mut c0 = pk.p0_ntt.mul_pointwise(&u, self.primes());
        let mut c1 = pk.p1_ntt.mul_pointwise(&u, self.primes());
        self.inverse(&mut c0);
        self.inverse(&mut c1);
        let e1 = self.from_signed(&self.sample_error(rng));
        let e2 = self.from_signed(&self.sample_error(rng));
        c0.add_assign(&e1, self.primes());
        c1.add_assign(&e2, self.primes());
        for ((limb, &p), &d) in c0.limbs.iter_mut().zip(self.primes()).zip(&self.delta_mod) {
            for (x, &m) in limb.iter_mut().zip(&pt.coeffs) {
                *x = (*x + mul_mod(d, m % p, p)) % p;
            }
        }
        Ok(Ciphertext { digest: self.digest, c0, c1, depth: 0, noise_log2: self.fresh_noise_log2() })
    }

    /// Mixed-radix reconstruction of coefficient `i` into `[0, q)`.
    fn crt(&self, poly: &RnsPoly, i: usize) -> u128 {
        let primes = self.primes();
        let mut value = 0u128;
        for (k, &p) in primes.iter().enumerate() {
            // value so far, reduced mod p
            let partial = (value % p as u128) as u64;
            let x = poly.limbs[k][i];
            let diff = if x >= partial { x - partial } else { x + p - partial };
            let v = mul_mod(diff, self.garner_inv[k], p);
            value += v as u128 * self.prefix[k];
        }
        value
    }

    /// `c0 + c1 * s` in coefficient form.
    fn phase(&self, sk: &SecretKey, ct: &Ciphertext) -> RnsPoly {
        let mut c1 = ct.c1.clone();
        self.forward(&mut c1);
        let mut x = c1.mul_pointwise(&sk.s_ntt, self.primes());
        self.inverse(&mut x);
        x.add_assign(&ct.c0, self.primes());
        x
    }

    /// `round(t * x / q) mod t` by long division, valid for power-of-two `t`.
    fn scale_round(&self, x: u128) -> u64 {
        let q = self.q;
        let mut r = x;
        let mut quo = 0u64;
        for _ in 0..self.params.plain_bits {
            r <<= 1;
            quo <<= 1;
            if r >= q {
                r -= q;
                quo |= 1;
            }
        }
        if 2 * r >= q {
            quo += 1;
        }
        quo & (self.plain_modulus() - 1)
    }

    pub fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<Plaintext, HeError> {
        self.check(&sk.digest)?;
        self.check(&ct.digest)?;
        if self.noise_budget(ct) <= 0.0 {
            return Err(HeError::NoiseExhausted { budget: self.noise_budget(ct) });
        }
        let x = self.phase(sk, ct);
        Ok(Plaintext { coeffs: (0..self.degree()).map(|i| self.scale_round(self.crt(&x, i))).collect() })
    }

    /// Exact log2 of the largest noise coefficient. Test and diagnostics use only.
    pub fn measure_noise_log2(&self, sk: &SecretKey, ct: &Ciphertext) -> f64 {
        let x = self.phase(sk, ct);
        let q = self.q;
        let mut worst = 0u128;
        for i in 0..self.degree() {
            let xi = self.crt(&x, i);
            let m = self.scale_round(xi) as u128;
            let dm = self.delta * m;
            let diff = if xi >= dm { xi - dm } else { xi + q - dm };
            worst = worst.max(diff.min(q - diff));
        }
        if worst == 0 {
            f64::NEG_INFINITY
        } else {
            (worst as f64).log2()
        }
    }

    pub fn eval_add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        self.check(&a.digest)?;
        self.check(&b.digest)?;
        let mut out = a.clone();
        out.c0.add_assign(&b.c0, self.primes());
        out.c1.add_assign(&b.c1, self.primes());
        out.depth = a.depth.max(b.depth);
        // The carry when m_a + m_b wraps past t costs one unit of noise.
        out.noise_log2 = log2_add(log2_add(a.noise_log2, b.noise_log2), 0.0);
        Ok(out)
    }

    pub fn prepare_plain(&self, pt: &Plaintext) -> Result<PreparedPlaintext, HeError> {
        self.check_plain(pt)?;
        let t = self.plain_modulus();
        let half = t / 2;
        let centered: Vec<i64> = pt.coeffs.iter().map(|&c| if c > half { c as i64 - t as i64 } else { c as i64 }).collect();
        let norm = centered.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
        let nonzero = centered.iter().filter(|&&c| c != 0).count();
        let mut poly = self.from_signed(&centered);
        self.forward(&mut poly);
        Ok(PreparedPlaintext { poly, norm: norm.max(1) as f64, nonzero: nonzero.max(1) })
    }

    pub fn to_ntt(&self, ct: &Ciphertext) -> Result<NttCiphertext, HeError> {
        self.check(&ct.digest)?;
        let mut c0 = ct.c0.clone();
        let mut c1 = ct.c1.clone();
        self.forward(&mut c0);
        self.forward(&mut c1);
        Ok(NttCiphertext { c0, c1, depth: ct.depth, noise_log2: ct.noise_log2 })
    }

    pub fn from_ntt(&self, mut ct: NttCiphertext) -> Ciphertext {
        self.inverse(&mut ct.c0);
        self.inverse(&mut ct.c1);
        Ciphertext { digest: self.digest, c0: ct.c0, c1: ct.c1, depth: ct.depth, noise_log2: ct.noise_log2 }
    }

    pub fn mul_prepared(&self, ct: &NttCiphertext, pt: &PreparedPlaintext) -> Result<NttCiphertext, HeError> {
        if ct.depth >= self.params.max_depth {
            return Err(HeError::DepthExceeded { max: self.params.max_depth });
        }
        // Heuristic: the product noise behaves like a sum of `nonzero` terms of
        // random sign, plus the wrap term of the integer message product.
        let scale = pt.norm.log2() + 0.5 * (pt.nonzero as f64).log2();
        Ok(NttCiphertext {
            c0: ct.c0.mul_pointwise(&pt.poly, self.primes()),
            c1: ct.c1.mul_pointwise(&pt.poly, self.primes()),
            depth: ct.depth + 1,
            noise_log2: scale + log2_add(ct.noise_log2, 0.0),
        })
    }

    pub fn add_ntt_assign(&self, acc: &mut NttCiphertext, other: &NttCiphertext) {
        acc.c0.add_assign(&other.c0, self.primes());
        acc.c1.add_assign(&other.c1, self.primes());
        acc.depth = acc.depth.max(other.depth);
        acc.noise_log2 = log2_add(log2_add(acc.noise_log2, other.noise_log2), 0.0);
    }

    pub fn eval_plain_mul(&self, ct: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext, HeError> {
        let prepared = self.prepare_plain(pt)?;
        let c = self.to_ntt(ct)?;
        Ok(self.from_ntt(self.mul_prepared(&c, &prepared)?))
    }

    /// Adds uniform noise to `c0` so the decrypted noise no longer depends on the
    /// evaluated plaintexts. Uses at most a sixteenth of the capacity, or doubles
    /// the current noise when that is already larger.
    pub fn flood(&self, ct: &mut Ciphertext, rng: &mut (impl RngCore + ?Sized)) {
        let target = self.noise_capacity_log2() - 4.0;
        let bits = if ct.noise_log2 + 1.0 < target {
            target
        } else if ct.noise_log2 + 2.0 < self.noise_capacity_log2() {
            ct.noise_log2
        } else {
            return;
        };
        let bits = bits.floor().clamp(0.0, 62.0) as u32;
        let mask = (1u64 << bits) - 1;
        let smudge: Vec<i64> = (0..self.degree())
            .map(|_| {
                let w = rng.next_u64();
                let mag = (w >> 1) & mask;
                if w & 1 == 1 {
                    -(mag as i64)
                } else {
                    mag as i64
                }
            })
            .collect();
        ct.c0.add_assign(&self.from_signed(&smudge), self.primes());
        ct.noise_log2 = log2_add(ct.noise_log2, bits as f64);
    }

    pub fn ciphertext_from_bytes(&self, bytes: &[u8]) -> Result<Ciphertext, HeError> {
        let mut r = Reader { bytes, pos: 0 };
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        self.check(&digest)?;
        let depth = r.u32()?;
        let noise_log2 = f64::from_bits(r.u64()?);
        let c0 = r.poly(self)?;
        let c1 = r.poly(self)?;
        r.finish()?;
        Ok(Ciphertext { digest, c0, c1, depth, noise_log2 })
    }

    pub fn public_key_from_bytes(&self, bytes: &[u8]) -> Result<PublicKey, HeError> {
        let mut r = Reader { bytes, pos: 0 };
        let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
        self.check(&digest)?;
        let p0_ntt = r.poly(self)?;
        let p1_ntt = r.poly(self)?;
        r.finish()?;
        Ok(PublicKey { digest, p0_ntt, p1_ntt })
    }
}

fn put_poly(out: &mut Vec<u8>, poly: &RnsPoly) {
    out.extend_from_slice(&(poly.limbs.len() as u32).to_le_bytes());
    for limb in &poly.limbs {
        out.extend_from_slice(&(limb.len() as u32).to_le_bytes());
        for w in limb {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HeError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(HeError::Malformed("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, HeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, HeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn poly(&mut self, ctx: &HeContext) -> Result<RnsPoly, HeError> {
        let limbs = self.u32()? as usize;
        if limbs != ctx.primes().len() {
            return Err(HeError::Malformed("limb count"));
        }
        let mut poly = RnsPoly::zero(limbs, 0);
        for (limb, &p) in poly.limbs.iter_mut().zip(ctx.primes()) {
            let len = self.u32()? as usize;
            if len != ctx.degree() {
                return Err(HeError::Malformed("limb length"));
            }
            let raw = self.take(len * 8)?;
            *limb = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
            if limb.iter().any(|&x| x >= p) {
                return Err(HeError::Malformed("coefficient out of range"));
            }
        }
        Ok(poly)
    }

    fn finish(&self) -> Result<(), HeError> {
        if self.pos != self.bytes.len() {
            return Err(HeError::Malformed("trailing bytes"));
        }
        Ok(())
    }
}

impl Ciphertext {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn noise_log2(&self) -> f64 {
        self.noise_log2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 16 * self.c0.limbs.len() * self.c0.limbs[0].len());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.depth.to_le_bytes());
        out.extend_from_slice(&self.noise_log2.to_bits().to_le_bytes());
        put_poly(&mut out, &self.c0);
        put_poly(&mut out, &self.c1);
        out
    }
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.digest);
        put_poly(&mut out, &self.p0_ntt);
        put_poly(&mut out, &self.p1_ntt);
        out
    }
}
