//! IDX container format used by the MNIST distribution.
//!
//! Big-endian throughout: a 4-byte magic whose third byte is the element type
//! (0x08 = unsigned byte) and fourth byte is the rank, then one u32 per
//! dimension, then the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Dimensions and raw payload of an unsigned-byte IDX file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        kind: "IDX",
        detail: detail.into(),
    }
}

pub fn parse_idx(buf: &[u8], expected_magic: u32) -> Result<IdxArray> {
    let word = |at: usize| -> Result<u32> {
        buf.get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| format_err(format!("header truncated at byte {at}")))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(format_err(format!(
            "magic {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let payload = &buf[header.min(buf.len())..];
    if payload.len() != expected {
        return Err(format_err(format!(
            "dimensions {dims:?} need {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    Ok(IdxArray {
        dims,
        bytes: payload.to_vec(),
    })
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let buf = fs::read(path)?;
    parse_idx(&buf, expected_magic).map_err(|e| match e {
        Error::Format { kind, detail } => Error::Format {
            kind,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// Encodes unsigned-byte data as IDX.
pub fn encode_idx(magic: u32, dims: &[usize], bytes: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + bytes.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(bytes);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_image_header() {
        let buf = encode_idx(IMAGE_MAGIC, &[2, 2, 3], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 255]);
        let idx = parse_idx(&buf, IMAGE_MAGIC).unwrap();
        assert_eq!(idx.dims, vec![2, 2, 3]);
        assert_eq!(idx.bytes[11], 255);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let buf = encode_idx(LABEL_MAGIC, &[3], &[1, 2, 3]);
        assert!(parse_idx(&buf, IMAGE_MAGIC).is_err());
        assert!(parse_idx(&buf[..buf.len() - 1], LABEL_MAGIC).is_err());
        assert!(parse_idx(&buf[..6], LABEL_MAGIC).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(parse_idx(&long, LABEL_MAGIC).is_err());
    }
}
