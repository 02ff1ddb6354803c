//! Portable float map (PFM) disparity files, Middlebury flavour.
//!
//! Rows are stored bottom-to-top. A negative scale marks little-endian
//! samples. `+inf` encodes an unknown disparity.

use crate::error::{Error, Result};
use crate::grid::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PfmHeader {
    /// 1 for `Pf`, 3 for `PF`.
    pub bands: usize,
    pub width: usize,
    pub height: usize,
    pub scale: f64,
}

impl PfmHeader {
    pub fn little_endian(&self) -> bool {
        self.scale < 0.0
    }
}

/// Decoded samples in top-to-bottom row order, bands interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub header: PfmHeader,
    pub samples: Vec<f32>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_whitespace(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn token(&mut self, what: &str) -> Result<&'a str> {
        self.skip_whitespace();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}, found end of header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::Parse {
            offset: start,
            message: format!("{what} is not ASCII"),
        })
    }

    fn dimension(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        let tok = self.token(what)?;
        match tok.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Parse {
                offset: start,
                message: format!("{what} `{tok}` is not a positive integer"),
            }),
        }
    }
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    let bands = match bytes.get(..2) {
        Some(b"Pf") => 1,
        Some(b"PF") => 3,
        _ => return Err(cur.err("missing `Pf`/`PF` magic")),
    };
    cur.pos = 2;
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(cur.err("magic must be followed by whitespace"));
    }
    let width = cur.dimension("width")?;
    let height = cur.dimension("height")?;
    let scale_at = {
        cur.skip_whitespace();
        cur.pos
    };
    let tok = cur.token("scale")?;
    let scale: f64 = tok.parse().map_err(|_| Error::Parse {
        offset: scale_at,
        message: format!("scale `{tok}` is not a number"),
    })?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Parse {
            offset: scale_at,
            message: format!("scale must be finite and nonzero, got `{tok}`"),
        });
    }
    // exactly one whitespace byte separates the header from the payload
    if !bytes.get(cur.pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(cur.err("header must end with a whitespace byte"));
    }
    cur.pos += 1;

    let header = PfmHeader {
        bands,
        width,
        height,
        scale,
    };
    let count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bands))
        .ok_or_else(|| Error::Parse {
            offset: cur.pos,
            message: "image dimensions overflow".into(),
        })?;
    let needed = count.checked_mul(4).ok_or_else(|| Error::Parse {
        offset: cur.pos,
        message: "image dimensions overflow".into(),
    })?;
    let payload = &bytes[cur.pos..];
    if payload.len() < needed {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!(
                "truncated payload: {} of {needed} bytes present",
                payload.len()
            ),
        });
    }

    let row_len = width * bands;
    let mut samples = vec![0.0f32; count];
    for (file_row, chunk) in payload[..needed].chunks_exact(row_len * 4).enumerate() {
        let row = height - 1 - file_row;
        for (k, raw) in chunk.chunks_exact(4).enumerate() {
            let raw = [raw[0], raw[1], raw[2], raw[3]];
            samples[row * row_len + k] = if header.little_endian() {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            };
        }
    }
    Ok(PfmImage { header, samples })
}

/// Reads a PFM as a scalar field. For three-band files the first band is
/// used. Non-finite samples (Middlebury writes `+inf` for unknown
/// disparity) become invalid pixels.
pub fn read_pfm(bytes: &[u8]) -> Result<ScalarField> {
    let img = decode_pfm(bytes)?;
    let PfmHeader {
        bands,
        width,
        height,
        ..
    } = img.header;
    let data = img
        .samples
        .iter()
        .step_by(bands)
        .map(|&x| x as f64)
        .collect();
    ScalarField::new(width, height, data)
}

/// Writes a single-band little-endian PFM; invalid pixels become `+inf`.
pub fn write_pfm(field: &ScalarField) -> Vec<u8> {
    let (w, h) = field.dims();
    let mut out = format!("Pf\n{w} {h}\n-1\n").into_bytes();
    out.reserve(w * h * 4);
    for v in (0..h).rev() {
        for u in 0..w {
            let x = field.get(u, v).map_or(f32::INFINITY, |x| x as f32);
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}
