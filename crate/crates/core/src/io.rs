//! File formats: binary PGM (P5, 8/16-bit) and the raw little-endian `f32`
//! containers for images (`CDSAF32\0`) and 4-D tensors (`CDSAT4\0\0`).
//!
//! PGM samples are scaled to `[0, 1]` by the header's maximum code value on
//! load, and clamped to `[0, 1]` then quantized on save. The raw containers
//! store samples verbatim.

use std::fs;
use std::path::Path;

use crate::error::{CdsaError, Result};
use crate::image::Image;
use crate::tensor::Tensor4;

pub const F32_IMAGE_MAGIC: &[u8; 8] = b"CDSAF32\0";
pub const F32_TENSOR_MAGIC: &[u8; 8] = b"CDSAT4\0\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm8,
    Pgm16,
    F32Raw,
}

impl ImageFormat {
    pub fn max_code(self) -> Option<u32> {
        match self {
            ImageFormat::Pgm8 => Some(255),
            ImageFormat::Pgm16 => Some(65535),
            ImageFormat::F32Raw => None,
        }
    }
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_error(offset: usize, message: impl Into<String>) -> CdsaError {
    CdsaError::Parse { offset, message: message.into() }
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(parse_error(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0u64; 3];
    for (k, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        if pos == 2 {
            return Err(parse_error(pos, "expected whitespace after magic"));
        }
        let start = pos;
        while let Some(b) = bytes.get(pos) {
            if !b.is_ascii_digit() {
                break;
            }
            pos += 1;
        }
        if start == pos {
            return Err(parse_error(start, format!("expected decimal header field #{}", k + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| parse_error(start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(parse_error(pos, "expected single whitespace before raster")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(parse_error(2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(parse_error(pos - 1, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(PgmHeader {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u32,
        data_offset: pos,
    })
}

/// Picks a format from the extension, peeking at the PGM header for bit depth.
pub fn detect_format(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("f32") => Ok(ImageFormat::F32Raw),
        Some("pgm") => {
            let bytes = fs::read(path)?;
            let header = parse_pgm_header(&bytes)?;
            Ok(if header.maxval <= 255 { ImageFormat::Pgm8 } else { ImageFormat::Pgm16 })
        }
        _ => Err(CdsaError::arg(format!(
            "cannot infer image format of {} (expected .pgm or .f32)",
            path.display()
        ))),
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Pgm8 | ImageFormat::Pgm16 => decode_pgm(bytes, format),
        ImageFormat::F32Raw => decode_f32(bytes),
    }
}

fn decode_pgm(bytes: &[u8], format: ImageFormat) -> Result<Image> {
    let h = parse_pgm_header(bytes)?;
    let wide = h.maxval > 255;
    match (format, wide) {
        (ImageFormat::Pgm8, true) => {
            return Err(parse_error(
                h.data_offset - 1,
                format!("maxval {} is not an 8-bit PGM", h.maxval),
            ))
        }
        (ImageFormat::Pgm16, false) => {
            return Err(parse_error(
                h.data_offset - 1,
                format!("maxval {} is not a 16-bit PGM", h.maxval),
            ))
        }
        _ => {}
    }
    let n = h.width * h.height;
    let sample = if wide { 2 } else { 1 };
    let raster = &bytes[h.data_offset..];
    if raster.len() < n * sample {
        return Err(parse_error(
            bytes.len(),
            format!("raster truncated: need {} bytes, found {}", n * sample, raster.len()),
        ));
    }
    let scale = h.maxval as f64;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let code = if wide {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as u32
        } else {
            raster[i] as u32
        };
        if code > h.maxval {
            return Err(parse_error(
                h.data_offset + i * sample,
                format!("sample {code} exceeds maxval {}", h.maxval),
            ));
        }
        data.push(code as f64 / scale);
    }
    Ok(Image::from_raw(h.height, h.width, data))
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| parse_error(offset, "header truncated"))
}

fn decode_f32(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 8 || &bytes[..8] != F32_IMAGE_MAGIC {
        return Err(parse_error(0, "missing CDSAF32 magic"));
    }
    let height = read_u32(bytes, 8)? as usize;
    let width = read_u32(bytes, 12)? as usize;
    let samples = read_f32_block(bytes, 16, height * width)?;
    Ok(Image::from_raw(height, width, samples))
}

fn read_f32_block(bytes: &[u8], offset: usize, n: usize) -> Result<Vec<f64>> {
    let need = n * 4;
    if bytes.len() - offset != need {
        return Err(parse_error(
            offset,
            format!("payload is {} bytes, header implies {}", bytes.len() - offset, need),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for (i, chunk) in bytes[offset..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(CdsaError::Validation(format!(
                "non-finite sample at index {i} (byte offset {})",
                offset + 4 * i
            )));
        }
        out.push(v as f64);
    }
    Ok(out)
}

pub fn encode_image(img: &Image, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Pgm8 | ImageFormat::Pgm16 => {
            let maxval = format.max_code().unwrap();
            let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
            for &v in img.data() {
                let code = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
                if maxval > 255 {
                    out.extend_from_slice(&(code as u16).to_be_bytes());
                } else {
                    out.push(code as u8);
                }
            }
            out
        }
        ImageFormat::F32Raw => {
            let mut out = Vec::with_capacity(16 + 4 * img.len());
            out.extend_from_slice(F32_IMAGE_MAGIC);
            out.extend_from_slice(&(img.height() as u32).to_le_bytes());
            out.extend_from_slice(&(img.width() as u32).to_le_bytes());
            for &v in img.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out
        }
    }
}

pub fn load_image(path: impl AsRef<Path>, format: ImageFormat) -> Result<Image> {
    decode_image(&fs::read(path)?, format)
}

pub fn save_image(path: impl AsRef<Path>, img: &Image, format: ImageFormat) -> Result<()> {
    fs::write(path, encode_image(img, format))?;
    Ok(())
}

pub fn encode_tensor(t: &Tensor4) -> Vec<u8> {
    let (n, c, h, w) = t.dims();
    let mut out = Vec::with_capacity(24 + 4 * t.data().len());
    out.extend_from_slice(F32_TENSOR_MAGIC);
    for d in [n, c, h, w] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor4> {
    if bytes.len() < 8 || &bytes[..8] != F32_TENSOR_MAGIC {
        return Err(parse_error(0, "missing CDSAT4 magic"));
    }
    let mut dims = [0usize; 4];
    for (k, d) in dims.iter_mut().enumerate() {
        *d = read_u32(bytes, 8 + 4 * k)? as usize;
    }
    let [n, c, h, w] = dims;
    let data = read_f32_block(bytes, 24, n * c * h * w)?;
    Tensor4::new(n, c, h, w, data)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor4> {
    decode_tensor(&fs::read(path)?)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor4) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}
