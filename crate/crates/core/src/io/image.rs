//! 8/16-bit PGM (P5) and PNG image decoding, plus PNG encoding.

use std::io::Cursor;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::grid::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    /// Guesses the format from a file extension.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

pub fn read_image(bytes: &[u8], format: ImageFormat) -> Result<ImageBuffer> {
    match format {
        ImageFormat::Pgm => read_pgm(bytes),
        ImageFormat::Png => read_png(bytes),
    }
}

fn read_pgm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.get(..2) != Some(b"P5") {
        return Err(Error::Parse {
            offset: 0,
            message: "missing `P5` magic".into(),
        });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and `#` comments may precede every header field
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        let value = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{name} is not a positive integer"),
            })?;
        fields[k] = value;
    }
    let [width, height, maxval] = fields;
    if maxval > 65535 {
        return Err(Error::Format(format!(
            "PGM maxval {maxval} exceeds 16 bits"
        )));
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Parse {
            offset: pos,
            message: "header must end with a whitespace byte".into(),
        });
    }
    pos += 1;
    let bytes_per_sample = if maxval < 256 { 1 } else { 2 };
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bytes_per_sample))
        .ok_or_else(|| Error::Parse {
            offset: pos,
            message: "image dimensions overflow".into(),
        })?;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated payload: {} of {needed} bytes", payload.len()),
        });
    }
    let scale = maxval as f64;
    let data = if bytes_per_sample == 1 {
        payload[..needed]
            .iter()
            .map(|&b| b as f64 / scale)
            .collect()
    } else {
        payload[..needed]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    ImageBuffer::new(width, height, 1, data)
}

fn read_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let png_err = |e: png::DecodingError| Error::Format(format!("png: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.interlaced {
        return Err(Error::Format("interlaced PNG is not supported".into()));
    }
    let (color, depth) = (info.color_type, info.bit_depth);
    let (in_channels, out_channels) = match color {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(Error::Format("palette PNG is not supported".into())),
    };
    let (max, wide) = match depth {
        BitDepth::Eight => (255.0, false),
        BitDepth::Sixteen => (65535.0, true),
        other => {
            return Err(Error::Format(format!(
                "unsupported PNG bit depth {:?}",
                other
            )))
        }
    };
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let bytes_per_sample = if wide { 2 } else { 1 };
    let mut data = Vec::with_capacity(w * h * out_channels);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        for px in
            row[..w * in_channels * bytes_per_sample].chunks_exact(in_channels * bytes_per_sample)
        {
            for c in 0..out_channels {
                let s = if wide {
                    u16::from_be_bytes([px[2 * c], px[2 * c + 1]]) as f64
                } else {
                    px[c] as f64
                };
                data.push(s / max);
            }
        }
    }
    ImageBuffer::new(w, h, out_channels, data)
}

fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes an image as 8-bit grayscale or RGB PNG.
pub fn write_png(image: &ImageBuffer) -> Result<Vec<u8>> {
    let data: Vec<u8> = image.data().iter().map(|&x| quantize(x)).collect();
    let color = if image.channels() == 1 {
        ColorType::Grayscale
    } else {
        ColorType::Rgb
    };
    encode_png(image.width(), image.height(), color, &data)
}

/// Encodes raw 8-bit RGB triples.
pub fn write_png_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Dimension(format!(
            "{width}x{height} RGB image needs {} bytes, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    encode_png(width, height, ColorType::Rgb, rgb)
}

fn encode_png(width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let enc_err = |e: png::EncodingError| Error::Format(format!("png: {e}"));
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(enc_err)?;
        writer.write_image_data(data).map_err(enc_err)?;
    }
    Ok(out)
}
