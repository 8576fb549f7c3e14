//! Binary checkpoint container.
//!
//! ```text
//! "LDE1" | version: u32 | section count: u32
//! per section: name length: u32 | name (UTF-8) | offset: u64 | length: u64
//! section payloads
//! CRC-32 of every preceding byte: u32
//! ```
//!
//! All integers are little-endian. A tensor payload is `rank: u32`, `rank`
//! dims as u32, then the values as f64. The one text section, `config`,
//! holds UTF-8 TOML describing what the tensors belong to.

use std::path::Path;

use lde_core::DenseArray;

use crate::error::{io_err, CliError, Result};

pub const MAGIC: &[u8; 4] = b"LDE1";
pub const VERSION: u32 = 1;
pub const CONFIG_SECTION: &str = "config";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    /// Tensors in file order.
    pub tensors: Vec<(String, DenseArray)>,
}

impl Checkpoint {
    pub fn new(config: impl Into<String>) -> Self {
        Self {
            config: config.into(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: DenseArray) -> Result<()> {
        let name = name.into();
        if name == CONFIG_SECTION || self.tensors.iter().any(|(n, _)| *n == name) {
            return Err(CliError::Checkpoint(format!("duplicate section {name:?}")));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&DenseArray> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CliError::Checkpoint(format!("missing section {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payloads: Vec<(&str, Vec<u8>)> = vec![(CONFIG_SECTION, self.config.as_bytes().to_vec())];
        payloads.extend(self.tensors.iter().map(|(n, t)| (n.as_str(), encode_tensor(t))));

        let table_len: usize = payloads.iter().map(|(n, _)| 4 + n.len() + 16).sum();
        let mut offset = (12 + table_len) as u64;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(payloads.len() as u32).to_le_bytes());
        for (name, payload) in &payloads {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            offset += payload.len() as u64;
        }
        for (_, payload) in &payloads {
            out.extend_from_slice(payload);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| CliError::Checkpoint(msg);
        if bytes.len() < 16 {
            return Err(bad(format!("{} bytes is shorter than any checkpoint", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(bad(format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}")));
        }
        if &body[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| bad("section name is not UTF-8".into()))?
                .to_string();
            let offset = r.u64()? as usize;
            let length = r.u64()? as usize;
            if entries.iter().any(|(n, _, _): &(String, usize, usize)| *n == name) {
                return Err(bad(format!("duplicate section {name:?}")));
            }
            entries.push((name, offset, length));
        }
        let mut config = None;
        let mut tensors = Vec::new();
        for (name, offset, length) in entries {
            let payload = offset
                .checked_add(length)
                .and_then(|end| body.get(offset..end))
                .ok_or_else(|| bad(format!("section {name:?} lies outside the file")))?;
            if name == CONFIG_SECTION {
                let text = std::str::from_utf8(payload).map_err(|_| bad("config section is not UTF-8".into()))?;
                config = Some(text.to_string());
            } else {
                tensors.push((
                    name.clone(),
                    decode_tensor(payload).map_err(|e| bad(format!("{name}: {e}")))?,
                ));
            }
        }
        Ok(Self {
            config: config.ok_or_else(|| bad("no config section".into()))?,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

fn encode_tensor(t: &DenseArray) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.rank() + 8 * t.len());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_tensor(payload: &[u8]) -> std::result::Result<DenseArray, String> {
    let mut r = Reader { buf: payload, pos: 0 };
    let err = |e: CliError| e.to_string();
    let rank = r.u32().map_err(err)? as usize;
    let shape = (0..rank)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()
        .map_err(err)?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    let rest = &payload[r.pos..];
    if rest.len() != count * 8 {
        return Err(format!(
            "shape {shape:?} needs {} value bytes, found {}",
            count * 8,
            rest.len()
        ));
    }
    let data = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseArray::new(shape, data).map_err(|e| e.to_string())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .pos
            .checked_add(n)
            .and_then(|end| self.buf.get(self.pos..end))
            .ok_or_else(|| CliError::Checkpoint("truncated header".into()))?;
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
