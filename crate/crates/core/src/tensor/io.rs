//! Binary tensor and mask files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic[4] | version u16 | rank u16 | dims u32 × rank | payload
//! ```
//!
//! Tensor files (`EMVT`) carry IEEE-754 binary32 values in row-major order.
//! Mask files (`EMVM`) are rank 2 `[H, W]` and carry packed bits row-major,
//! most significant bit first, each row padded to a byte boundary.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{PixelMask, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"EMVT";
pub const MASK_MAGIC: &[u8; 4] = b"EMVM";
pub const FORMAT_VERSION: u16 = 1;

const MAX_RANK: usize = 8;

fn write_header(out: &mut Vec<u8>, magic: &[u8; 4], dims: &[usize]) -> Result<()> {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u16).to_le_bytes());
    for &d in dims {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

/// Parses a header and returns `(dims, payload)`.
fn read_header<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 8 {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version.into(),
            expected: FORMAT_VERSION.into(),
        });
    }
    let rank = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let dims_end = 8 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Format("truncated dimensions".into()));
    }
    let dims = bytes[8..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    Ok((dims, &bytes[dims_end..]))
}

pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + 4 * tensor.dims.len() + 4 * tensor.data.len());
    write_header(&mut out, TENSOR_MAGIC, &tensor.dims)?;
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let (dims, payload) = read_header(bytes, TENSOR_MAGIC)?;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("element count overflows".into()))?;
    if payload.len() != count * 4 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, dims {:?} require {}",
            payload.len(),
            dims,
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn encode_mask(mask: &PixelMask) -> Result<Vec<u8>> {
    let row_bytes = mask.width().div_ceil(8);
    let mut out = Vec::with_capacity(16 + row_bytes * mask.height());
    write_header(&mut out, MASK_MAGIC, &[mask.height(), mask.width()])?;
    for y in 0..mask.height() {
        let mut row = vec![0u8; row_bytes];
        for x in 0..mask.width() {
            if mask.get(y, x) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    Ok(out)
}

pub fn decode_mask(bytes: &[u8]) -> Result<PixelMask> {
    let (dims, payload) = read_header(bytes, MASK_MAGIC)?;
    let (h, w) = match dims.as_slice() {
        &[h, w] => (h, w),
        other => return Err(Error::Format(format!("mask must be rank 2, got {other:?}"))),
    };
    let row_bytes = w.div_ceil(8);
    if payload.len() != row_bytes * h {
        return Err(Error::Format(format!(
            "mask payload holds {} bytes, expected {}",
            payload.len(),
            row_bytes * h
        )));
    }
    Ok(PixelMask::from_fn(h, w, |y, x| {
        payload[y * row_bytes + x / 8] & (0x80 >> (x % 8)) != 0
    }))
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(tensor)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &PixelMask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(mask)?).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<PixelMask> {
    let path = path.as_ref();
    decode_mask(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
