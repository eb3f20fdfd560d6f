//! Binary PPM (`P6`, maxval 255) and the float/8-bit conversions.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::Map;

/// Clamp to `[0, 1]`, then round half up to the nearest 8-bit level.
#[inline]
pub fn to_u8(x: f64) -> u8 {
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    (x * 255.0 + 0.5).floor() as u8
}

#[inline]
pub fn from_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Interleaved RGB bytes of a 3-channel map.
pub fn to_rgb8(map: &Map) -> Result<Vec<u8>> {
    if map.channels != 3 {
        return Err(Error::invalid(format!("expected a 3-channel map, got {}", map.channels)));
    }
    Ok(map.data.iter().map(|v| to_u8(*v)).collect())
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            return;
        }
    }
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::parse(start, format!("bad {what}")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Map> {
    if !bytes.starts_with(b"P6") {
        return Err(Error::parse(0, "bad magic, expected P6"));
    }
    let mut pos = 2;
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval_at = pos;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat {
            path: Default::default(),
            message: format!("maxval {maxval} at byte {maxval_at}; only 255 is supported"),
        });
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let expected = width * height * 3;
    let actual = bytes.len() - pos;
    if actual < expected {
        return Err(Error::parse(
            pos,
            format!("truncated pixel data: expected {expected} bytes, found {actual}"),
        ));
    }
    let data = bytes[pos..pos + expected].iter().map(|b| from_u8(*b)).collect();
    Map::from_data(width, height, 3, data)
}

pub fn encode_ppm(map: &Map) -> Result<Vec<u8>> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(to_rgb8(map)?);
    Ok(out)
}

pub fn read_ppm(path: &Path) -> Result<Map> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| e.with_path(path))
}

pub fn write_ppm(path: &Path, map: &Map) -> Result<()> {
    std::fs::write(path, encode_ppm(map)?).map_err(|e| Error::io(path, e))
}

/// PNG encoding of a 3-channel map, used at the HTTP boundary.
pub fn encode_png(map: &Map) -> Result<Vec<u8>> {
    let rgb = to_rgb8(map)?;
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, map.width as u32, map.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
        w.write_image_data(&rgb)
            .map_err(|e| Error::invalid(format!("png encoding failed: {e}")))?;
    }
    Ok(out)
}
