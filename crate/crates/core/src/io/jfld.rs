//! Chunked binary container for Jacobian fields.
//!
//! Layout (all little-endian):
//!
//! | bytes | content                                       |
//! |-------|-----------------------------------------------|
//! | 4     | magic `JFLD`                                  |
//! | 4     | `u32` format version (1)                      |
//! | 8     | `u64` triangle count F                        |
//! | 4     | `u32` nominal chunk size (triangles per chunk) |
//!
//! followed by chunks, each a `u32` triangle count `c` and `9 c` `f32` values,
//! one row-major 3x3 matrix per triangle. Chunk counts sum to F.

use crate::error::{Error, Result};
use crate::gradient::JacobianField;
use crate::Real;

pub const MAGIC: &[u8; 4] = b"JFLD";
pub const VERSION: u32 = 1;
pub const DEFAULT_CHUNK: u32 = 4096;

pub fn write_jfld<T: Real>(field: &JacobianField<T>, chunk: u32) -> Vec<u8> {
    let chunk = chunk.max(1) as usize;
    let f = field.len();
    let mut out = Vec::with_capacity(20 + f * 36 + 4 * f.div_ceil(chunk));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(f as u64).to_le_bytes());
    out.extend_from_slice(&(chunk as u32).to_le_bytes());
    for part in field.jacobians.chunks(chunk) {
        out.extend_from_slice(&(part.len() as u32).to_le_bytes());
        for m in part {
            for row in m {
                for x in row {
                    out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn read_jfld<T: Real>(bytes: &[u8]) -> Result<JacobianField<T>> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Parse("JFLD stream is truncated".into()))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::Parse("missing JFLD magic".into()));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported JFLD version {version}")));
    }
    let f = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let _chunk = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut jacobians = Vec::with_capacity(f.min(1 << 24));
    while jacobians.len() < f {
        let c = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if c == 0 || jacobians.len() + c > f {
            return Err(Error::Parse(format!("JFLD chunk of {c} triangles overruns F = {f}")));
        }
        let data = take(36 * c)?;
        for m in data.chunks_exact(36) {
            let mut j = [[T::zero(); 3]; 3];
            for (k, x) in m.chunks_exact(4).enumerate() {
                j[k / 3][k % 3] = T::of(f32::from_le_bytes(x.try_into().unwrap()) as f64);
            }
            jacobians.push(j);
        }
    }
    if pos != bytes.len() {
        return Err(Error::Parse("trailing bytes after JFLD chunks".into()));
    }
    Ok(JacobianField { jacobians })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_across_chunk_boundaries() {
        let jacobians = (0..10)
            .map(|t| {
                let mut m = [[0.0f32; 3]; 3];
                for (k, row) in m.iter_mut().enumerate() {
                    for (c, x) in row.iter_mut().enumerate() {
                        *x = t as f32 + 0.1 * k as f32 - 0.01 * c as f32;
                    }
                }
                m
            })
            .collect();
        let field = JacobianField { jacobians };
        for chunk in [1, 3, 10, 64] {
            let back: JacobianField<f32> = read_jfld(&write_jfld(&field, chunk)).unwrap();
            assert_eq!(back, field);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = write_jfld(&JacobianField::<f64>::identity(5), 2);
        assert!(read_jfld::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_jfld::<f64>(&bad).is_err());
    }
}
