//! Tensor files.
//!
//! Binary layout, little-endian:
//!
//! | field   | size            |
//! |---------|-----------------|
//! | magic   | 4 (`PITN`)      |
//! | version | 1 (`1`)         |
//! | dtype   | 1 (0 = f64 reals, 1 = u64 ring words) |
//! | rank    | 2               |
//! | dims    | 8 each          |
//! | values  | 8 each          |
//!
//! The text form is for small hand-written fixtures: an optional `shape: d0 d1 ...`
//! line, then whitespace-separated reals; `#` starts a comment. Without a
//! shape line the tensor is one-dimensional.

use std::fs;
use std::path::Path;

use crate::CliError;

pub const MAGIC: &[u8; 4] = b"PITN";
const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real = 0,
    Word = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real(Vec<f64>),
    Word(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl TensorFile {
    pub fn reals(shape: Vec<usize>, values: Vec<f64>) -> Self {
        Self { shape, data: TensorData::Real(values) }
    }

    fn len(&self) -> usize {
        match &self.data {
            TensorData::Real(v) => v.len(),
            TensorData::Word(v) => v.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.push(VERSION);
        out.push(match self.data {
            TensorData::Real(_) => DType::Real as u8,
            TensorData::Word(_) => DType::Word as u8,
        });
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::Word(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::Input(format!("tensor file: {m}"));
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad(&format!("unsupported version {}", bytes[4])));
        }
        let dtype = bytes[5];
        let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let mut pos = 8;
        let mut word = || -> Result<u64, CliError> {
            let b = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated"))?;
            pos += 8;
            Ok(u64::from_le_bytes(b.try_into().unwrap()))
        };
        let shape = (0..rank).map(|_| word().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflows"))?;
        let words = (0..n).map(|_| word()).collect::<Result<Vec<_>, _>>()?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let data = match dtype {
            0 => TensorData::Real(words.into_iter().map(f64::from_bits).collect()),
            1 => TensorData::Word(words),
            d => return Err(bad(&format!("unknown dtype {d}"))),
        };
        Ok(Self { shape, data })
    }

    pub fn parse_text(text: &str) -> Result<Self, CliError> {
        let mut shape = None;
        let mut values = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if let Some(rest) = line.strip_prefix("shape:") {
                let dims = rest
                    .split_whitespace()
                    .map(|t| t.parse::<usize>().map_err(|e| CliError::Input(format!("shape: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?;
                shape = Some(dims);
                continue;
            }
            for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                values.push(tok.parse::<f64>().map_err(|e| CliError::Input(format!("value {tok:?}: {e}")))?);
            }
        }
        let shape = shape.unwrap_or_else(|| vec![values.len()]);
        let t = Self::reals(shape, values);
        if t.shape.iter().product::<usize>() != t.len() {
            return Err(CliError::Input(format!("shape {:?} does not hold {} values", t.shape, t.len())));
        }
        Ok(t)
    }

    pub fn to_text(&self) -> String {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let mut out = format!("shape: {}\n", dims.join(" "));
        let row = *self.shape.last().unwrap_or(&1).max(&1);
        let vals: Vec<String> = match &self.data {
            TensorData::Real(v) => v.iter().map(|x| format!("{x}")).collect(),
            TensorData::Word(v) => v.iter().map(|x| x.to_string()).collect(),
        };
        for chunk in vals.chunks(row) {
            out.push_str(&chunk.join(" "));
            out.push('\n');
        }
        out
    }

    /// Reads either form, telling them apart by the magic.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Io(path.display().to_string(), e))?;
        if bytes.starts_with(MAGIC) {
            Self::from_bytes(&bytes)
        } else {
            Self::parse_text(&String::from_utf8_lossy(&bytes))
        }
    }

    /// Writes text when the extension is `.txt`, binary otherwise.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let bytes = if path.extension().is_some_and(|e| e == "txt") { self.to_text().into_bytes() } else { self.to_bytes() };
        fs::write(path, bytes).map_err(|e| CliError::Io(path.display().to_string(), e))
    }
}
