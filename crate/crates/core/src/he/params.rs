//! Parameter sets and their validation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ntt::{find_primes, primality};
use super::HeError;

/// Largest `log2 q` giving 128-bit security for a ternary secret, indexed by ring
/// degree (HomomorphicEncryption.org standard table).
pub const SECURITY_TABLE_128: [(usize, u32); 6] =
    [(1024, 27), (2048, 54), (4096, 109), (8192, 218), (16384, 438), (32768, 881)];

pub fn max_log_q_128(n: usize) -> Option<u32> {
    SECURITY_TABLE_128.iter().find(|(d, _)| *d == n).map(|(_, b)| *b)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeParams {
    /// Ring degree `N_p`.
    pub poly_degree: usize,
    /// Plaintext modulus is `2^plain_bits`.
    pub plain_bits: u32,
    /// RNS limbs of the ciphertext modulus `q`.
    pub primes: Vec<u64>,
    /// Supported plaintext-multiplication depth.
    pub max_depth: u32,
    /// Skip the security-table check. Only the toy parameter set sets this.
    pub insecure: bool,
}

impl HeParams {
    /// `N = 4096`, `t = 2^41`, `q` a product of two primes just under `2^55` and `2^54`.
    pub fn default_secure() -> Self {
        Self::build(4096, 41, &[55, 54], false).expect("default parameters exist")
    }

    /// `N = 8`, `t = 2^8`, 40-bit `q`. Insecure; for exhaustive tests only.
    pub fn toy() -> Self {
        Self::build(8, 8, &[20, 20], true).expect("toy parameters exist")
    }

    /// Chooses primes `p = 1 mod lcm(2N, t)` of the requested bit sizes.
    pub fn build(poly_degree: usize, plain_bits: u32, prime_bits: &[u32], insecure: bool) -> Result<Self, HeError> {
        if !poly_degree.is_power_of_two() || poly_degree < 2 || plain_bits == 0 || plain_bits > 62 {
            return Err(HeError::InvalidParams(format!("degree {poly_degree}, plain bits {plain_bits}")));
        }
        let step = (2 * poly_degree as u64).max(1 << plain_bits);
        let primes = find_primes(step, prime_bits)
            .ok_or_else(|| HeError::InvalidParams(format!("no primes of sizes {prime_bits:?} for step {step}")))?;
        let p = Self { poly_degree, plain_bits, primes, max_depth: 1, insecure };
        p.validate()?;
        Ok(p)
    }

    pub fn plain_modulus(&self) -> u64 {
        1u64 << self.plain_bits
    }

    pub fn q(&self) -> u128 {
        self.primes.iter().fold(1u128, |acc, &p| acc.saturating_mul(p as u128))
    }

    pub fn log2_q(&self) -> f64 {
        self.primes.iter().map(|&p| (p as f64).log2()).sum()
    }

    pub fn validate(&self) -> Result<(), HeError> {
        let n = self.poly_degree;
        if !n.is_power_of_two() || n < 2 {
            return Err(HeError::InvalidParams(format!("degree {n} is not a power of two")));
        }
        if self.primes.is_empty() {
            return Err(HeError::InvalidParams("empty modulus chain".into()));
        }
        let t = self.plain_modulus();
        for (i, &p) in self.primes.iter().enumerate() {
            if !primality(p) || p >= 1 << 62 {
                return Err(HeError::InvalidParams(format!("limb {p} is not a prime below 2^62")));
            }
            if (p - 1) % (2 * n as u64) != 0 {
                return Err(HeError::InvalidParams(format!("limb {p} does not support a degree-{n} NTT")));
            }
            if self.primes[..i].contains(&p) {
                return Err(HeError::InvalidParams(format!("repeated limb {p}")));
            }
        }
        // Decryption rounds in u128 and needs 2q to fit.
        if self.log2_q() >= 126.0 {
            return Err(HeError::InvalidParams("q must stay below 2^126".into()));
        }
        let q = self.q();
        if q % t as u128 != 1 {
            return Err(HeError::InvalidParams("q must be 1 mod t".into()));
        }
        if (q / t as u128) < (n as u128) << 8 {
            return Err(HeError::InvalidParams("q/t leaves no room for noise".into()));
        }
        if !self.insecure {
            let log_q = self.log2_q().ceil() as u32;
            match max_log_q_128(n) {
                Some(max) if log_q <= max => {}
                max => {
                    return Err(HeError::Insecure { degree: n, log_q, max_log_q: max.unwrap_or(0) });
                }
            }
        }
        Ok(())
    }

    /// Stable digest identifying this parameter set on the wire.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"privinfer-he-params-v1");
        h.update((self.poly_degree as u64).to_le_bytes());
        h.update(self.plain_bits.to_le_bytes());
        h.update(self.max_depth.to_le_bytes());
        h.update([self.insecure as u8]);
        h.update((self.primes.len() as u32).to_le_bytes());
        for p in &self.primes {
            h.update(p.to_le_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_parameters() {
        let p = HeParams::default_secure();
        assert_eq!(p.poly_degree, 4096);
        assert_eq!(p.plain_modulus(), 1 << 41);
        assert!(p.log2_q() > 108.0 && p.log2_q() <= 109.0);
        assert_eq!(p.q() % (1u128 << 41), 1);
    }

    #[test]
    fn insecure_sets_rejected() {
        let err = HeParams::build(1024, 41, &[55, 54], false).unwrap_err();
        assert!(matches!(err, HeError::Insecure { degree: 1024, .. }));
        assert!(HeParams::build(8, 8, &[20, 20], false).is_err());
        assert!(HeParams::toy().validate().is_ok());
    }
}
