//! Arithmetic in `Z_{2^l}` and the fixed-point encoding every other module builds on.
//!
//! Values are stored in `u64` words; products are formed in `u128` before
//! reduction. Negative reals live in the upper half of the ring
//! (two's-complement convention).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RingError {
    #[error("invalid ring configuration: bit width {bits}, fractional bits {frac_bits}")]
    InvalidConfig { bits: u32, frac_bits: u32 },
    #[error("value {0} is outside the representable fixed-point range")]
    Overflow(f64),
    #[error("ring configuration mismatch: {0:?} vs {1:?}")]
    ConfigMismatch(RingConfig, RingConfig),
    #[error("tensor shape {shape:?} does not match data length {len}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
}

/// Bit width `l` and fractional precision `phi` of the share ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RingConfig {
    pub bits: u32,
    pub frac_bits: u32,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self { bits: 41, frac_bits: 12 }
    }
}

impl RingConfig {
    pub fn new(bits: u32, frac_bits: u32) -> Result<Self, RingError> {
        if frac_bits < 2 || frac_bits >= bits || bits > 64 {
            return Err(RingError::InvalidConfig { bits, frac_bits });
        }
        Ok(Self { bits, frac_bits })
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        if self.bits == 64 {
            u64::MAX
        } else {
            (1u64 << self.bits) - 1
        }
    }

    /// `2^l` as a wide integer (it does not fit a `u64` when `l = 64`).
    #[inline]
    pub fn modulus(&self) -> u128 {
        1u128 << self.bits
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    #[inline]
    pub fn reduce(&self, v: u64) -> u64 {
        v & self.mask()
    }

    #[inline]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        a.wrapping_add(b) & self.mask()
    }

    #[inline]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        a.wrapping_sub(b) & self.mask()
    }

    #[inline]
    pub fn neg(&self, a: u64) -> u64 {
        a.wrapping_neg() & self.mask()
    }

    #[inline]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) as u64) & self.mask()
    }

    /// Two's-complement interpretation of a ring word.
    #[inline]
    pub fn to_signed(&self, v: u64) -> i64 {
        let v = v & self.mask();
        if self.bits == 64 {
            v as i64
        } else if v >> (self.bits - 1) == 1 {
            (v as i64) - (1i64 << self.bits)
        } else {
            v as i64
        }
    }

    #[inline]
    pub fn from_signed(&self, v: i64) -> u64 {
        (v as u64) & self.mask()
    }

    /// Most significant bit of the ring word.
    #[inline]
    pub fn msb(&self, v: u64) -> u8 {
        ((v >> (self.bits - 1)) & 1) as u8
    }

    /// Largest magnitude accepted by [`encode_fixed`]: `2^(l - phi - 1)`.
    pub fn max_real(&self) -> f64 {
        2f64.powi((self.bits - self.frac_bits - 1) as i32)
    }

    /// Floor division of the signed interpretation by a public positive divisor.
    pub fn floor_div(&self, v: u64, divisor: u64) -> u64 {
        let s = self.to_signed(v) as i128;
        self.from_signed(s.div_euclid(divisor as i128) as i64)
    }

    /// Arithmetic right shift of the signed interpretation.
    pub fn shift_right(&self, v: u64, shift: u32) -> u64 {
        self.from_signed(self.to_signed(v) >> shift)
    }

    /// Encode without the range check, saturating nothing. Used for quantizing
    /// values already known to be in range.
    pub fn encode_unchecked(&self, r: f64) -> u64 {
        let scaled = (r * self.scale()).round();
        self.from_signed(scaled as i64)
    }

    pub fn encode(&self, r: f64) -> Result<u64, RingError> {
        if !r.is_finite() || r.abs() >= self.max_real() {
            return Err(RingError::Overflow(r));
        }
        Ok(self.encode_unchecked(r))
    }

    pub fn decode(&self, v: u64) -> f64 {
        self.to_signed(v) as f64 / self.scale()
    }
}

/// A single ring element tagged with its configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RingElement {
    value: u64,
    config: RingConfig,
}

impl RingElement {
    pub fn new(value: u64, config: RingConfig) -> Self {
        Self { value: value & config.mask(), config }
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn config(&self) -> RingConfig {
        self.config
    }

    fn check(&self, other: &RingElement) -> Result<RingConfig, RingError> {
        if self.config != other.config {
            return Err(RingError::ConfigMismatch(self.config, other.config));
        }
        Ok(self.config)
    }
}

/// `round(r * 2^phi) mod 2^l`, rounding half away from zero.
pub fn encode_fixed(r: f64, cfg: RingConfig) -> Result<RingElement, RingError> {
    Ok(RingElement::new(cfg.encode(r)?, cfg))
}

pub fn decode_fixed(e: RingElement) -> f64 {
    e.config.decode(e.value)
}

pub fn ring_add(a: RingElement, b: RingElement) -> Result<RingElement, RingError> {
    let cfg = a.check(&b)?;
    Ok(RingElement::new(cfg.add(a.value, b.value), cfg))
}

pub fn ring_sub(a: RingElement, b: RingElement) -> Result<RingElement, RingError> {
    let cfg = a.check(&b)?;
    Ok(RingElement::new(cfg.sub(a.value, b.value), cfg))
}

pub fn ring_mul(a: RingElement, b: RingElement) -> Result<RingElement, RingError> {
    let cfg = a.check(&b)?;
    Ok(RingElement::new(cfg.mul(a.value, b.value), cfg))
}

/// Row-major tensor of ring words.
///
/// The leading dimension is the batch when the tensor feeds a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    data: Vec<u64>,
    config: RingConfig,
}

impl FixedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<u64>, config: RingConfig) -> Result<Self, RingError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(RingError::ShapeMismatch { shape, len: data.len() });
        }
        let mask = config.mask();
        let data = data.into_iter().map(|v| v & mask).collect();
        Ok(Self { shape, data, config })
    }

    pub fn zeros(shape: Vec<usize>, config: RingConfig) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0; len], config }
    }

    pub fn from_reals(shape: Vec<usize>, reals: &[f64], config: RingConfig) -> Result<Self, RingError> {
        let data = reals.iter().map(|&r| config.encode(r)).collect::<Result<Vec<_>, _>>()?;
        Self::new(shape, data, config)
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().map(|&v| self.config.decode(v)).collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u64> {
        self.data
    }

    pub fn config(&self) -> RingConfig {
        self.config
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, RingError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(RingError::ShapeMismatch { shape, len: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }
}
