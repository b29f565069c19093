//! Binary PPM (P6) codec, maxval 255 only.
//!
//! The header grammar follows the netpbm spec: "P6", then width, height and
//! maxval as decimal tokens separated by whitespace, with `#` comments
//! allowed anywhere whitespace is, then a single whitespace byte before the
//! raw RGB payload. Encoding always writes the normalized header
//! `P6\n<w> <h>\n255\n`, so decode(encode(img)) == img exactly.

use super::RawImage;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PpmError {
    BadMagic { found: String },
    BadHeader { message: String },
    UnsupportedMaxval { found: u32 },
    Truncated { expected: usize, got: usize },
}

impl fmt::Display for PpmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PpmError::BadMagic { found } => {
                write!(f, "bad magic {found:?}, expected \"P6\"")
            }
            PpmError::BadHeader { message } => write!(f, "bad header: {message}"),
            PpmError::UnsupportedMaxval { found } => {
                write!(f, "unsupported maxval {found}, only 255 is handled")
            }
            PpmError::Truncated { expected, got } => {
                write!(f, "truncated payload: expected {expected} bytes, got {got}")
            }
        }
    }
}

impl std::error::Error for PpmError {}

fn is_ppm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            let b = self.buf[self.pos];
            if is_ppm_space(b) {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u32, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && self.buf[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PpmError::BadHeader {
                message: format!("expected a decimal {what} at byte {start}"),
            });
        }
        let text = std::str::from_utf8(&self.buf[start..self.pos]).expect("digits are ascii");
        text.parse().map_err(|_| PpmError::BadHeader {
            message: format!("{what} {text:?} does not fit in u32"),
        })
    }
}

/// Decode a binary PPM. Only "P6" with maxval 255 is accepted.
pub fn decode_ppm(bytes: &[u8]) -> Result<RawImage, PpmError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PpmError::BadMagic { found });
    }
    let mut c = Cursor { buf: bytes, pos: 2 };
    let width = c.read_uint("width")? as usize;
    let height = c.read_uint("height")? as usize;
    let maxval = c.read_uint("maxval")?;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval { found: maxval });
    }
    if width == 0 || height == 0 {
        return Err(PpmError::BadHeader {
            message: format!("extents must be positive, got {width}x{height}"),
        });
    }
    // exactly one whitespace byte separates the header from the payload
    if c.pos >= bytes.len() || !is_ppm_space(bytes[c.pos]) {
        return Err(PpmError::BadHeader {
            message: "missing whitespace after maxval".into(),
        });
    }
    c.pos += 1;

    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| PpmError::BadHeader {
            message: format!("extents {width}x{height} overflow the payload size"),
        })?;
    let got = bytes.len() - c.pos;
    if got < expected {
        return Err(PpmError::Truncated { expected, got });
    }
    let pixels = bytes[c.pos..c.pos + expected].to_vec();
    Ok(RawImage::new(width, height, pixels).expect("extents and length already checked"))
}

/// Encode with the normalized header `P6\n<w> <h>\n255\n`.
pub fn encode_ppm(img: &RawImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}
