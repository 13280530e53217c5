//! Binary model container.
//!
//! ```text
//! magic "PIMF" | version: u16 | header length: u32 | header (JSON)
//! | weight words: u64 ... | sha256 of everything before: [u8; 32]
//! ```
//!
//! Integers are little-endian. Weight words follow layer order, each weighted
//! layer contributing its weights then its biases; lengths follow from the
//! header geometry. A skeleton (architecture only) carries no words.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_graph, ModelError, ModelSpec};

pub const MAGIC: &[u8; 4] = b"PIMF";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    spec: ModelSpec,
    has_weights: bool,
}

pub fn save_model(m: &ModelSpec) -> Result<Vec<u8>, ModelError> {
    let report = validate_graph(m);
    if !report.is_empty() {
        return Err(ModelError::Invalid(report));
    }
    let has_weights = !m.is_skeleton();
    let header =
        serde_json::to_vec(&Header { spec: m.clone(), has_weights }).map_err(|e| ModelError::Header(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    if has_weights {
        for (w, b) in m.layers.iter().filter_map(|l| l.params()) {
            for v in w.iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn load_model(bytes: &[u8]) -> Result<ModelSpec, ModelError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 10 + 32 {
        return Err(ModelError::Truncated);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(ModelError::Checksum);
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let header_len = u32::from_le_bytes(body[6..10].try_into().unwrap()) as usize;
    let header_bytes = body.get(10..10 + header_len).ok_or(ModelError::Truncated)?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| ModelError::Header(e.to_string()))?;
    let mut spec = header.spec;
    let mut words = body[10 + header_len..].chunks_exact(8);
    if !words.remainder().is_empty() {
        return Err(ModelError::Truncated);
    }
    if header.has_weights {
        for layer in &mut spec.layers {
            let Some((wl, bl)) = layer.param_lens() else { continue };
            let (w, b) = layer.params_mut().expect("weighted kind");
            for (dst, len) in [(w, wl), (b, bl)] {
                for _ in 0..len {
                    let chunk = words.next().ok_or(ModelError::Truncated)?;
                    dst.push(u64::from_le_bytes(chunk.try_into().unwrap()));
                }
            }
        }
    }
    if words.next().is_some() {
        return Err(ModelError::Header("trailing weight words".into()));
    }
    let report = validate_graph(&spec);
    if !report.is_empty() {
        return Err(ModelError::Invalid(report));
    }
    if spec.layers.iter().filter_map(|l| l.params()).flat_map(|(w, b)| w.iter().chain(b)).any(|&v| v > spec.ring.mask()) {
        return Err(ModelError::Header("weight word outside the ring".into()));
    }
    Ok(spec)
}
