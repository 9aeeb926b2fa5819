//! The `MSPC` container: a fixed 37-byte little-endian header followed by
//! the range-coded payload.

use crate::error::{format_err, Result};

pub const MAGIC: &[u8; 4] = b"MSPC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 37;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub profile: u8,
    /// Original (unpadded) image size.
    pub width: u32,
    pub height: u32,
    pub channels: u16,
    pub latent_h: u16,
    pub latent_w: u16,
    pub lambda_index: u8,
    pub digest: u64,
}

pub fn serialize_bitstream(header: &Header, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(header.profile);
    out.extend_from_slice(&header.width.to_le_bytes());
    out.extend_from_slice(&header.height.to_le_bytes());
    out.extend_from_slice(&header.channels.to_le_bytes());
    out.extend_from_slice(&header.latent_h.to_le_bytes());
    out.extend_from_slice(&header.latent_w.to_le_bytes());
    out.push(header.lambda_index);
    out.extend_from_slice(&header.digest.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

pub fn parse_bitstream(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err!("bitstream is {} bytes, shorter than its {HEADER_LEN}-byte header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err!("not an MSPC bitstream (bad magic)"));
    }
    if bytes[4] != VERSION {
        return Err(format_err!("unsupported bitstream version {}", bytes[4]));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let header = Header {
        profile: bytes[5],
        width: u32_at(6),
        height: u32_at(10),
        channels: u16_at(14),
        latent_h: u16_at(16),
        latent_w: u16_at(18),
        lambda_index: bytes[20],
        digest: u64_at(21),
    };
    let len = u64_at(29);
    let rest = &bytes[HEADER_LEN..];
    if len != rest.len() as u64 {
        return Err(format_err!("header announces {len} payload bytes, stream carries {}", rest.len()));
    }
    Ok((header, rest))
}
