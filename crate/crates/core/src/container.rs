//! Shared binary framing for every file the crate writes.
//!
//! ```text
//! offset  size  field
//! 0       4     magic (ASCII, identifies the payload kind)
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     header length H, u64 little-endian
//! 16      H     UTF-8 JSON header
//! 16+H    8     payload length P in bytes, u64 little-endian
//! 24+H    P     payload: packed little-endian floats, width given by the header
//! ```
//!
//! The header carries the shape information needed to slice the payload.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported container version {0}")]
    Version(u32),
    #[error("header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload length {found} bytes, expected {expected}")]
    PayloadLength { expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Float width of a payload block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Float64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }
}

pub fn encode_f32(values: impl IntoIterator<Item = f32>) -> Vec<u8> {
    values.into_iter().flat_map(f32::to_le_bytes).collect()
}

pub fn encode_f64(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(f64::to_le_bytes).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn decode_f64(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

/// Decodes a payload of either width into f64.
pub fn decode(dtype: Dtype, bytes: &[u8]) -> Vec<f64> {
    match dtype {
        Dtype::Float32 => decode_f32(bytes).into_iter().map(f64::from).collect(),
        Dtype::Float64 => decode_f64(bytes),
    }
}

pub fn write<W: Write, H: Serialize>(
    mut w: W,
    magic: &[u8; 4],
    header: &H,
    payload: &[u8],
) -> Result<(), ContainerError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

pub fn to_bytes<H: Serialize>(
    magic: &[u8; 4],
    header: &H,
    payload: &[u8],
) -> Result<Vec<u8>, ContainerError> {
    let mut out = Vec::with_capacity(payload.len() + 256);
    write(&mut out, magic, header, payload)?;
    Ok(out)
}

pub fn read<R: Read, H: DeserializeOwned>(
    mut r: R,
    magic: &[u8; 4],
) -> Result<(H, Vec<u8>), ContainerError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(ContainerError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(ContainerError::Version(version));
    }
    let header_len = read_u64(&mut r)? as usize;
    let mut json = vec![0u8; header_len];
    r.read_exact(&mut json)?;
    let header = serde_json::from_slice(&json)?;
    let payload_len = read_u64(&mut r)? as usize;
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload)?;
    Ok((header, payload))
}

pub fn from_bytes<H: DeserializeOwned>(
    bytes: &[u8],
    magic: &[u8; 4],
) -> Result<(H, Vec<u8>), ContainerError> {
    read(bytes, magic)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ContainerError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn expect_len(found: usize, expected: usize) -> Result<(), ContainerError> {
    if found == expected {
        Ok(())
    } else {
        Err(ContainerError::PayloadLength { expected, found })
    }
}

/// FNV-1a over bytes, used for sequence hashes in embedding headers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_round_trip() {
        let header = serde_json::json!({"n": 3, "tag": "x"});
        let payload = encode_f32([1.0, -2.5, 3.25]);
        let bytes = to_bytes(b"TEST", &header, &payload).unwrap();
        let (h, p): (serde_json::Value, Vec<u8>) = from_bytes(&bytes, b"TEST").unwrap();
        assert_eq!(h, header);
        assert_eq!(decode_f32(&p), vec![1.0, -2.5, 3.25]);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let bytes = to_bytes(b"AAAA", &serde_json::json!({}), &[]).unwrap();
        let err = from_bytes::<serde_json::Value>(&bytes, b"BBBB").unwrap_err();
        assert!(matches!(err, ContainerError::BadMagic { .. }));
    }

    #[test]
    fn truncated_input_is_an_error() {
        let bytes = to_bytes(b"AAAA", &serde_json::json!({}), &encode_f64([1.0])).unwrap();
        assert!(from_bytes::<serde_json::Value>(&bytes[..bytes.len() - 3], b"AAAA").is_err());
    }

    #[test]
    fn fnv_known_value() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
