//! Binary PGM (`P5`) images, 8- or 16-bit, big-endian samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Mask};

pub fn encode_pgm(img: &GrayImage, bit_depth: u8) -> Result<Vec<u8>> {
    let maxval: u32 = match bit_depth {
        8 => 255,
        16 => 65535,
        other => return Err(Error::invalid(format!("bit depth must be 8 or 16, got {other}"))),
    };
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), maxval).into_bytes();
    for &v in img.data() {
        let q = (v * maxval as f64).round() as u32;
        if bit_depth == 8 {
            out.push(q as u8);
        } else {
            out.extend_from_slice(&(q as u16).to_be_bytes());
        }
    }
    Ok(out)
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| &bytes[start..*pos])
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0;
    if header_token(bytes, &mut pos) != Some(b"P5") {
        return Err(Error::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        header_token(bytes, &mut pos)
            .and_then(|t| std::str::from_utf8(t).ok())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(path, format!("bad or missing {what} in header")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "header values out of range"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bytes_per;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::format(
            path,
            format!("truncated raster: need {need} bytes, found {}", raster.len()),
        ));
    }
    // Divide rather than multiply by 1/maxval so decoded values are fixed
    // points of `quantize16`.
    let max = maxval as f64;
    let data: Vec<f64> = if bytes_per == 1 {
        raster[..need].iter().map(|&b| b as f64 / max).collect()
    } else {
        raster[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / max)
            .collect()
    };
    if data.iter().any(|&v| v > 1.0) {
        return Err(Error::format(path, "sample exceeds maxval"));
    }
    GrayImage::new(height, width, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_pgm(img: &GrayImage, path: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img, bit_depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, path)
}

/// Masks are stored as 8-bit PGMs, 255 for set pixels.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let img = GrayImage::new(
        mask.height(),
        mask.width(),
        mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )?;
    save_pgm(&img, path, 8)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let img = load_pgm(path)?;
    Mask::new(
        img.height(),
        img.width(),
        img.data().iter().map(|&v| v >= 0.5).collect(),
    )
}

/// The image as it will read back after a 16-bit save.
pub fn quantize16(img: &GrayImage) -> GrayImage {
    let data = img
        .data()
        .iter()
        .map(|&v| (v * 65535.0).round() / 65535.0)
        .collect();
    GrayImage::new(img.height(), img.width(), data).expect("quantized values stay in [0, 1]")
}
