//! Binary model dumps.
//!
//! Layout, all little-endian:
//!
//! | offset | size | content            |
//! |--------|------|--------------------|
//! | 0      | 8    | magic `PFBMODEL`   |
//! | 8      | 8    | `u64` dimension    |
//! | 16     | 8·d  | `f64` values       |

use std::io::{Read, Write};
use std::path::Path;

use pfedbred::ParamVector;

pub const MAGIC: &[u8; 8] = b"PFBMODEL";

#[derive(Debug, thiserror::Error)]
pub enum DumpError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a model dump (bad magic)")]
    Magic,
    #[error("dump declares {declared} values but holds {found}")]
    Length { declared: u64, found: usize },
    #[error(transparent)]
    Model(#[from] pfedbred::Error),
}

pub fn encode(params: &ParamVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.dim());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.dim() as u64).to_le_bytes());
    for v in params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamVector, DumpError> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(DumpError::Magic);
    }
    let declared = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[16..];
    if body.len() % 8 != 0 || (body.len() / 8) as u64 != declared {
        return Err(DumpError::Length {
            declared,
            found: body.len() / 8,
        });
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(ParamVector::new(values)?)
}

pub fn write_model(path: &Path, params: &ParamVector) -> Result<(), DumpError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ParamVector, DumpError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let p = ParamVector::new(vec![1.5, -0.25, 3.0]).unwrap();
        let bytes = encode(&p);
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(bytes[8], 3);
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn rejects_corrupt_dumps() {
        let p = ParamVector::new(vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&p);
        assert!(matches!(decode(&bytes[..20]), Err(DumpError::Length { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(DumpError::Magic)));
    }
}
