//! Checkpoint container: a JSON header describing named parameter entries
//! followed by their raw little-endian f64 bytes.
//!
//! Layout: 8-byte magic `STNCKPT1`, u64 LE header length, header JSON,
//! payload. Entry offsets are relative to the payload start. Round-trips
//! are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"STNCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    entries: Vec<HeaderEntry>,
    #[serde(default)]
    extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// In-memory checkpoint: ordered named tensors plus a free-form JSON
/// `extra` block (model config, training state, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
    pub extra: serde_json::Value,
}

impl Checkpoint {
    pub fn new() -> Checkpoint {
        Checkpoint {
            entries: Vec::new(),
            extra: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f64>) {
        self.entries.push(CheckpointEntry {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
    }

    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let expect: usize = e.shape.iter().product();
            if expect != e.data.len() {
                return Err(Error::Checkpoint(format!(
                    "entry '{}': shape {:?} does not match {} values",
                    e.name,
                    e.shape,
                    e.data.len()
                )));
            }
            entries.push(HeaderEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                offset,
                len: e.data.len() as u64,
            });
            offset += (e.data.len() * 8) as u64;
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            dtype: "f64".to_string(),
            entries,
            extra: self.extra.clone(),
        };
        let header_json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header_json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        if header.dtype != "f64" {
            return Err(Error::Checkpoint(format!("unsupported dtype {}", header.dtype)));
        }
        let payload = &bytes[header_end..];
        let mut entries = Vec::with_capacity(header.entries.len());
        for he in &header.entries {
            let start = he.offset as usize;
            let byte_len = he.len as usize * 8;
            let end = start
                .checked_add(byte_len)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| {
                    Error::Checkpoint(format!("entry '{}' exceeds payload", he.name))
                })?;
            let expect: usize = he.shape.iter().product();
            if expect != he.len as usize {
                return Err(Error::Checkpoint(format!(
                    "entry '{}': shape {:?} inconsistent with len {}",
                    he.name, he.shape, he.len
                )));
            }
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(CheckpointEntry {
                name: he.name.clone(),
                shape: he.shape.clone(),
                data,
            });
        }
        Ok(Checkpoint {
            entries,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = fs::read(path.as_ref()).map_err(|e| {
            Error::Checkpoint(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Checkpoint::from_bytes(&bytes)
    }
}
