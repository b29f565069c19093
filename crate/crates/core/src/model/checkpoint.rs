//! Bit-exact checkpoint serialization.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic            4 bytes  "PLNT"
//! version          u32      currently 1
//! config length    u32
//! config text      UTF-8 key=value lines (see ModelConfig::to_kv_text)
//! param count      u32
//! per parameter:
//!   name length    u32
//!   name           UTF-8
//!   rank           u32
//!   extents        u32 each
//!   data           f32 little-endian, row-major
//! checksum         u32      CRC-32 (IEEE) over everything after the magic
//! ```
//!
//! Values are stored as f32; loading widens back to f64, so a round-trip
//! reproduces parameters exactly once they have been quantized through f32.

use super::{ModelConfig, ParamStore};
use crate::tensor::Tensor;
use std::fmt;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PLNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CheckpointError {
    BadMagic { found: [u8; 4] },
    UnsupportedVersion { found: u32 },
    ChecksumMismatch { stored: u32, computed: u32 },
    Truncated { needed: usize, remaining: usize },
    BadConfig { message: String },
    BadName { message: String },
    Io(std::io::Error),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic { found } => {
                write!(f, "bad magic {found:?}, expected \"PLNT\"")
            }
            CheckpointError::UnsupportedVersion { found } => {
                write!(f, "unsupported version {found}, expected {CHECKPOINT_VERSION}")
            }
            CheckpointError::ChecksumMismatch { stored, computed } => {
                write!(f, "checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")
            }
            CheckpointError::Truncated { needed, remaining } => {
                write!(f, "truncated: needed {needed} more bytes, only {remaining} left")
            }
            CheckpointError::BadConfig { message } => write!(f, "bad config block: {message}"),
            CheckpointError::BadName { message } => write!(f, "bad parameter name: {message}"),
            CheckpointError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

/// CRC-32 (IEEE 802.3, reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let remaining = self.buf.len() - self.pos;
        if n > remaining {
            return Err(CheckpointError::Truncated { needed: n, remaining });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn encode(params: &ParamStore, config: &ModelConfig) -> Vec<u8> {
    let mut body = Vec::new();
    push_u32(&mut body, CHECKPOINT_VERSION);
    let cfg_text = config.to_kv_text();
    push_u32(&mut body, cfg_text.len() as u32);
    body.extend_from_slice(cfg_text.as_bytes());
    push_u32(&mut body, params.len() as u32);
    for (name, p) in params.iter() {
        push_u32(&mut body, name.len() as u32);
        body.extend_from_slice(name.as_bytes());
        push_u32(&mut body, p.value.rank() as u32);
        for &e in p.value.shape() {
            push_u32(&mut body, e as u32);
        }
        for &v in p.value.data() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let checksum = crc32(&body);
    let mut out = Vec::with_capacity(4 + body.len() + 4);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&body);
    push_u32(&mut out, checksum);
    out
}

fn decode(bytes: &[u8]) -> Result<(ParamStore, ModelConfig), CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated {
            needed: 4,
            remaining: bytes.len(),
        });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    if bytes.len() < 8 {
        return Err(CheckpointError::Truncated {
            needed: 8 - bytes.len(),
            remaining: 0,
        });
    }
    // checksum covers everything between magic and the trailing u32
    let body = &bytes[4..bytes.len() - 4];
    let stored = u32::from_le_bytes([
        bytes[bytes.len() - 4],
        bytes[bytes.len() - 3],
        bytes[bytes.len() - 2],
        bytes[bytes.len() - 1],
    ]);
    let computed = crc32(body);
    if stored != computed {
        return Err(CheckpointError::ChecksumMismatch { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 0 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion { found: version });
    }
    let cfg_len = r.u32()? as usize;
    let cfg_text =
        std::str::from_utf8(r.take(cfg_len)?).map_err(|e| CheckpointError::BadConfig {
            message: e.to_string(),
        })?;
    let config = ModelConfig::from_kv_text(cfg_text)
        .map_err(|message| CheckpointError::BadConfig { message })?;

    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| CheckpointError::BadName {
                message: e.to_string(),
            })?
            .to_string();
        if params.get(&name).is_some() {
            return Err(CheckpointError::BadName {
                message: format!("duplicate parameter {name}"),
            });
        }
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        // checked so a corrupt shape cannot wrap the length computation
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| CheckpointError::BadName {
                message: format!("{name}: shape {shape:?} overflows"),
            })?;
        let raw = r.take(len * 4)?;
        let mut data = Vec::with_capacity(len);
        for chunk in raw.chunks_exact(4) {
            data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
        }
        let value = Tensor::new(shape, data).map_err(|e| CheckpointError::BadName {
            message: format!("{name}: {e}"),
        })?;
        params.insert(&name, value);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::BadConfig {
            message: format!("{} trailing bytes after last parameter", body.len() - r.pos),
        });
    }
    Ok((params, config))
}

/// Serialize parameters and config to `path`.
pub fn save_checkpoint(
    params: &ParamStore,
    config: &ModelConfig,
    path: &Path,
) -> Result<(), CheckpointError> {
    fs::write(path, encode(params, config))?;
    Ok(())
}

/// Load a checkpoint. Nothing is returned unless the whole file validates.
pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, ModelConfig), CheckpointError> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
