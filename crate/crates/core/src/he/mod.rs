//! Leveled RLWE homomorphic encryption for the linear layers, plus the
//! coefficient packing that maps matrix-vector products and convolutions onto
//! single polynomial products.

pub mod bfv;
pub mod ntt;
pub mod packing;
pub mod params;

use thiserror::Error;

pub use bfv::{Ciphertext, HeContext, NttCiphertext, Plaintext, PreparedPlaintext, PublicKey, SecretKey};
pub use packing::{ConvGeometry, PackingPlan};
pub use params::HeParams;

#[derive(Debug, Error)]
pub enum HeError {
    #[error("invalid HE parameters: {0}")]
    InvalidParams(String),
    #[error("degree {degree} with log2(q) = {log_q} is below 128-bit security (max {max_log_q})")]
    Insecure { degree: usize, log_q: u32, max_log_q: u32 },
    #[error("noise budget exhausted ({budget:.1} bits left)")]
    NoiseExhausted { budget: f64 },
    #[error("plaintext multiplication depth exceeded (max {max})")]
    DepthExceeded { max: u32 },
    #[error("ciphertext or key belongs to a different parameter set")]
    ParamsMismatch,
    #[error("plaintext has the wrong length or a coefficient >= t")]
    InvalidPlaintext,
    #[error("malformed HE object: {0}")]
    Malformed(&'static str),
    #[error("packing: {0}")]
    Packing(String),
}
