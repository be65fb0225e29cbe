//! Binary checkpoint: `"FSPZ"`, version u32, precision u8, d u64, cut u32,
//! then `d` little-endian scalars. All integers little-endian.

use std::path::Path;

use super::ParamVector;
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FSPZ";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub precision: Precision,
    pub d: u64,
    pub cut: u32,
}

impl CheckpointHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: String| Error::Format {
            what: "checkpoint",
            detail,
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let precision = Precision::from_flag(bytes[8]).ok_or_else(|| bad(format!("precision flag {}", bytes[8])))?;
        let d = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let cut = u32::from_le_bytes(bytes[17..21].try_into().unwrap());
        let expected = (HEADER_LEN as u64).checked_add(d.saturating_mul(precision.bytes()));
        if expected != Some(bytes.len() as u64) {
            return Err(bad(format!("length {} does not match d = {d}", bytes.len())));
        }
        Ok(Self {
            version,
            precision,
            d,
            cut,
        })
    }
}

pub fn encode_checkpoint<T: Scalar>(theta: &ParamVector<T>, cut: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + theta.len() * T::PRECISION.bytes() as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::PRECISION.flag());
    out.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    out.extend_from_slice(&cut.to_le_bytes());
    for &v in theta.as_slice() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes a checkpoint whose precision must match `T`.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ParamVector<T>, CheckpointHeader)> {
    let header = CheckpointHeader::parse(bytes)?;
    if header.precision != T::PRECISION {
        return Err(Error::Format {
            what: "checkpoint",
            detail: format!("stored as {:?}, requested {:?}", header.precision, T::PRECISION),
        });
    }
    let width = T::PRECISION.bytes() as usize;
    let values = bytes[HEADER_LEN..].chunks_exact(width).map(T::read_le).collect();
    Ok((ParamVector::from_vec(values), header))
}

pub fn write_checkpoint<T: Scalar>(path: &Path, theta: &ParamVector<T>, cut: u32) -> Result<()> {
    std::fs::write(path, encode_checkpoint(theta, cut))?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<(ParamVector<T>, CheckpointHeader)> {
    decode_checkpoint(&std::fs::read(path)?)
}
