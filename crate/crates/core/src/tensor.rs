use std::path::Path;

use crate::error::{Error, Result};
use crate::export::atomic_write;

/// File layout: magic "ACRT", version u16 LE (= 1), ndim u16 LE, then ndim
/// dimension sizes as u32 LE, then the payload as row-major f32 LE.
pub const MAGIC: &[u8; 4] = b"ACRT";
pub const VERSION: u16 = 1;
const MAX_NDIM: usize = 8;

/// Serializes `data` (row-major, length = product of dims) to `path`
/// atomically. Payload bits are preserved exactly, including NaN patterns.
pub fn write_tensor(path: &Path, dims: &[u32], data: &[f32]) -> Result<()> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(Error::Format(format!(
            "tensor rank {} outside 1..={MAX_NDIM}",
            dims.len()
        )));
    }
    let expect = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
    if expect != data.len() {
        return Err(Error::Format(format!(
            "tensor dims {:?} imply {expect} values, got {}",
            dims,
            data.len()
        )));
    }
    let mut bytes = Vec::with_capacity(8 + dims.len() * 4 + data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u16).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Reads a tensor written by [`write_tensor`], validating magic, version,
/// rank, dimension product, and exact file length.
pub fn read_tensor(path: &Path) -> Result<(Vec<u32>, Vec<f32>)> {
    let bytes = std::fs::read(path)?;
    parse_tensor(&bytes)
}

pub fn parse_tensor(bytes: &[u8]) -> Result<(Vec<u32>, Vec<f32>)> {
    if bytes.len() < 8 {
        return Err(Error::Format("tensor file shorter than header".into()));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported tensor version {version}"
        )));
    }
    let ndim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::Format(format!("tensor rank {ndim} outside 1..={MAX_NDIM}")));
    }
    let header = 8 + ndim * 4;
    if bytes.len() < header {
        return Err(Error::Format("tensor header truncated".into()));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 8 + i * 4;
        dims.push(u32::from_le_bytes(
            bytes[off..off + 4].try_into().unwrap(),
        ));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
        .ok_or_else(|| Error::Format("tensor dims overflow".into()))?;
    let expect_len = header + count * 4;
    if bytes.len() != expect_len {
        return Err(Error::Format(format!(
            "tensor file is {} bytes, dims {:?} require {expect_len}",
            bytes.len(),
            dims
        )));
    }
    let mut data = Vec::with_capacity(count);
    for i in 0..count {
        let off = header + i * 4;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    Ok((dims, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.acrt");
        let data: Vec<f32> = vec![
            0.0,
            -0.0,
            1.5,
            f32::from_bits(0x7fc00001), // quiet NaN with payload
            f32::from_bits(1),          // smallest subnormal
            f32::INFINITY,
            -3.25e-30,
            123456.78,
        ];
        write_tensor(&path, &[2, 2, 2], &data).unwrap();
        let (dims, back) = read_tensor(&path).unwrap();
        assert_eq!(dims, vec![2, 2, 2]);
        assert_eq!(back.len(), data.len());
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_is_frozen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.acrt");
        write_tensor(&path, &[3], &[1.0, 2.0, 3.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"ACRT");
        assert_eq!(&bytes[4..8], &[1, 0, 1, 0]); // version 1, ndim 1
        assert_eq!(&bytes[8..12], &[3, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse_tensor(b"AC").is_err());
        assert!(parse_tensor(b"XXXX\x01\x00\x01\x00\x01\x00\x00\x00").is_err());
        // wrong version
        assert!(parse_tensor(b"ACRT\x02\x00\x01\x00\x01\x00\x00\x00\x00\x00\x80\x3f").is_err());
        // truncated payload
        assert!(parse_tensor(b"ACRT\x01\x00\x01\x00\x02\x00\x00\x00\x00\x00\x80\x3f").is_err());
        // trailing garbage
        assert!(parse_tensor(
            b"ACRT\x01\x00\x01\x00\x01\x00\x00\x00\x00\x00\x80\x3f\xff"
        )
        .is_err());
        // rank 0
        assert!(parse_tensor(b"ACRT\x01\x00\x00\x00").is_err());
    }

    #[test]
    fn rejects_mismatched_payload_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.acrt");
        assert!(write_tensor(&path, &[2, 3], &[0.0; 5]).is_err());
    }
}
