//! Binary PGM (P5) frame files: 0 = background, 255 = foreground.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::BinaryImage;
use crate::error::{Error, Result};

fn invalid(path: &Path, reason: impl Into<String>) -> Error {
    Error::InvalidImage { path: path.to_path_buf(), reason: reason.into() }
}

/// Splits the P5 header into its four tokens and returns the payload offset.
fn header_tokens(bytes: &[u8]) -> Option<([u64; 3], usize)> {
    let mut pos = 0;
    let mut tokens: Vec<&[u8]> = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        tokens.push(&bytes[start..pos]);
    }
    if tokens[0] != b"P5" || pos >= bytes.len() {
        return None;
    }
    let mut nums = [0u64; 3];
    for (n, t) in nums.iter_mut().zip(&tokens[1..]) {
        *n = std::str::from_utf8(t).ok()?.parse().ok()?;
    }
    // exactly one whitespace byte separates header and raster
    Some((nums, pos + 1))
}

/// Decodes a P5 image, binarizing at mid-scale (`> 127` for maxval 255).
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<BinaryImage> {
    let ([width, height, maxval], offset) =
        header_tokens(bytes).ok_or_else(|| invalid(path, "not a binary (P5) PGM"))?;
    if width == 0 || height == 0 {
        return Err(invalid(path, "empty image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(invalid(path, format!("unsupported maxval {maxval}")));
    }
    let (w, h) = (width as usize, height as usize);
    let sample = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[offset.min(bytes.len())..];
    if raster.len() != w * h * sample {
        return Err(invalid(
            path,
            format!("raster has {} bytes, expected {}", raster.len(), w * h * sample),
        ));
    }
    let pixels = if sample == 1 {
        raster.iter().map(|&v| (v as u64 * 255 > 127 * maxval) as u8).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as u64 * 255 > 127 * maxval) as u8)
            .collect()
    };
    BinaryImage::new(h, w, pixels)
}

pub fn read_pgm(path: &Path) -> Result<BinaryImage> {
    if !path.exists() {
        return Err(Error::MissingFrame(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    decode_pgm(&bytes, path)
}

pub fn encode_pgm(image: &BinaryImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.pixels().iter().map(|&p| if p == 1 { 255u8 } else { 0 }));
    out
}

pub fn write_pgm(path: &Path, image: &BinaryImage) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(image))?;
    Ok(())
}
