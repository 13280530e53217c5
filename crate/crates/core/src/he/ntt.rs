//! Negacyclic number-theoretic transform over a word-sized prime, with
//! Shoup-precomputed twiddles.

#[inline]
pub fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, p: u64) -> u64 {
    let mut acc = 1u64;
    base %= p;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, p);
        }
        base = mul_mod(base, base, p);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime via Fermat.
pub fn inv_mod(a: u64, p: u64) -> u64 {
    pow_mod(a, p - 2, p)
}

#[inline]
fn shoup(w: u64, p: u64) -> u64 {
    (((w as u128) << 64) / p as u128) as u64
}

/// `a * w mod p` in `[0, 2p)` given `w_shoup = floor(w * 2^64 / p)`.
#[inline]
fn mul_shoup_lazy(a: u64, w: u64, w_shoup: u64, p: u64) -> u64 {
    let q = ((a as u128 * w_shoup as u128) >> 64) as u64;
    a.wrapping_mul(w).wrapping_sub(q.wrapping_mul(p))
}

#[inline]
fn mul_shoup(a: u64, w: u64, w_shoup: u64, p: u64) -> u64 {
    let r = mul_shoup_lazy(a, w, w_shoup, p);
    if r >= p {
        r - p
    } else {
        r
    }
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for sp in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n.is_multiple_of(sp) {
            return n == sp;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    // These bases are deterministic for every 64-bit n.
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

pub fn primality(n: u64) -> bool {
    is_prime(n)
}

/// Largest primes `p < 2^bits` with `p = 1 mod step`, one per entry of `bit_sizes`,
/// all distinct.
pub fn find_primes(step: u64, bit_sizes: &[u32]) -> Option<Vec<u64>> {
    let mut out: Vec<u64> = Vec::with_capacity(bit_sizes.len());
    for &bits in bit_sizes {
        if bits > 62 {
            return None;
        }
        let mut k = ((1u64 << bits) - 1) / step;
        loop {
            if k == 0 {
                return None;
            }
            let p = k * step + 1;
            if p < (1u64 << bits) && !out.contains(&p) && is_prime(p) {
                out.push(p);
                break;
            }
            k -= 1;
        }
    }
    Some(out)
}

fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

#[derive(Debug, Clone)]
pub struct NttTable {
    pub p: u64,
    pub n: usize,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

impl NttTable {
    /// Requires `p` prime, `p = 1 mod 2n`, `n` a power of two.
    pub fn new(p: u64, n: usize) -> Option<Self> {
        if !n.is_power_of_two() || n < 2 || !(p - 1).is_multiple_of(2 * n as u64) || p >= 1 << 62 {
            return None;
        }
        let exp = (p - 1) / (2 * n as u64);
        let psi = (2..p.min(1 << 20)).map(|g| pow_mod(g, exp, p)).find(|&x| pow_mod(x, n as u64, p) == p - 1)?;
        let psi_inv = inv_mod(psi, p);
        let logn = n.trailing_zeros();
        let mut psi_rev = vec![0u64; n];
        let mut psi_inv_rev = vec![0u64; n];
        let (mut pw, mut pw_inv) = (1u64, 1u64);
        for i in 0..n {
            let r = bit_reverse(i, logn);
            psi_rev[r] = pw;
            psi_inv_rev[r] = pw_inv;
            pw = mul_mod(pw, psi, p);
            pw_inv = mul_mod(pw_inv, psi_inv, p);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| shoup(w, p)).collect();
        let psi_inv_rev_shoup = psi_inv_rev.iter().map(|&w| shoup(w, p)).collect();
        let n_inv = inv_mod(n as u64, p);
        Some(Self { p, n, psi_rev, psi_rev_shoup, psi_inv_rev, psi_inv_rev_shoup, n_inv, n_inv_shoup: shoup(n_inv, p) })
    }

    /// In-place forward transform; input and output in `[0, p)`.
    pub fn forward(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let p = self.p;
        let mut t = self.n;
        let mut m = 1;
        while m < self.n {
            t >>= 1;
            for i in 0..m {
                let j1 = 2 * i * t;
                let (w, ws) = (self.psi_rev[m + i], self.psi_rev_shoup[m + i]);
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = mul_shoup(*y, w, ws, p);
                    let s = u + v;
                    *x = if s >= p { s - p } else { s };
                    *y = if u >= v { u - v } else { u + p - v };
                }
            }
            m <<= 1;
        }
    }

    /// In-place inverse transform, including the `1/n` scaling.
    pub fn inverse(&self, a: &mut [u64]) {
        debug_assert_eq!(a.len(), self.n);
        let p = self.p;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m / 2;
            let mut j1 = 0;
            for i in 0..h {
                let (w, ws) = (self.psi_inv_rev[h + i], self.psi_inv_rev_shoup[h + i]);
                let (lo, hi) = a[j1..j1 + 2 * t].split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    let s = u + v;
                    *x = if s >= p { s - p } else { s };
                    let d = if u >= v { u - v } else { u + p - v };
                    *y = mul_shoup(d, w, ws, p);
                }
                j1 += 2 * t;
            }
            t <<= 1;
            m = h;
        }
        for x in a.iter_mut() {
            *x = mul_shoup(*x, self.n_inv, self.n_inv_shoup, p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn schoolbook(a: &[u64], b: &[u64], p: u64) -> Vec<u64> {
        let n = a.len();
        let mut out = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                let prod = mul_mod(a[i], b[j], p);
                let k = i + j;
                if k < n {
                    out[k] = (out[k] + prod) % p;
                } else {
                    out[k - n] = (out[k - n] + p - prod) % p;
                }
            }
        }
        out
    }

    #[test]
    fn primes_are_found() {
        let ps = find_primes(1 << 41, &[55, 54]).unwrap();
        for &p in &ps {
            assert!(is_prime(p));
            assert_eq!((p - 1) % (1 << 41), 0);
        }
        assert!(ps[0] < 1 << 55 && ps[1] < 1 << 54);
        assert!(!is_prime(561) && !is_prime(1 << 40) && is_prime(65537));
    }

    #[test]
    fn roundtrip_and_convolution() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for (n, step, bits) in [(8usize, 256u64, 20u32), (64, 1 << 41, 55), (1024, 1 << 41, 54)] {
            let p = find_primes(step, &[bits]).unwrap()[0];
            let table = NttTable::new(p, n).unwrap();
            let a: Vec<u64> = (0..n).map(|_| rng.gen_range(0..p)).collect();
            let b: Vec<u64> = (0..n).map(|_| rng.gen_range(0..p)).collect();
            let mut fa = a.clone();
            table.forward(&mut fa);
            let mut back = fa.clone();
            table.inverse(&mut back);
            assert_eq!(back, a);
            let mut fb = b.clone();
            table.forward(&mut fb);
            let mut prod: Vec<u64> = fa.iter().zip(&fb).map(|(&x, &y)| mul_mod(x, y, p)).collect();
            table.inverse(&mut prod);
            assert_eq!(prod, schoolbook(&a, &b, p));
        }
    }
}
