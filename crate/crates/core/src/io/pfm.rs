//! Portable float map: `PF` (3 channels) or `Pf` (1 channel), little-endian
//! only (negative scale), rows stored bottom to top.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::Map;

/// Parsed header: channels, width, height and the offset of the pixel data.
struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

/// Reads the next whitespace-delimited token starting at `*pos`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(&'a str, usize)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, "unexpected end of header"));
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::parse(start, "header is not ASCII"))?;
    Ok((s, start))
}

fn header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let (magic, at) = token(bytes, &mut pos)?;
    let channels = match magic {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::parse(at, format!("bad magic {other:?}, expected PF or Pf"))),
    };
    let mut dim = |what: &str| -> Result<usize> {
        let (t, at) = token(bytes, &mut pos)?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::parse(at, format!("bad {what} {t:?}"))),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let (scale_text, at) = token(bytes, &mut pos)?;
    let scale: f64 = scale_text
        .parse()
        .map_err(|_| Error::parse(at, format!("bad scale {scale_text:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(at, format!("bad scale {scale_text:?}")));
    }
    if scale > 0.0 {
        return Err(Error::UnsupportedFormat {
            path: Default::default(),
            message: "big-endian PFM (positive scale) is not supported".into(),
        });
    }
    // Exactly one whitespace byte separates the header from the data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::parse(pos, "missing whitespace after scale"));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_offset: pos + 1,
    })
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Map> {
    let h = header(bytes)?;
    let count = h.width * h.height * h.channels;
    let expected = count * 4;
    let actual = bytes.len() - h.data_offset;
    if actual < expected {
        return Err(Error::parse(
            h.data_offset,
            format!("truncated pixel data: expected {expected} bytes, found {actual}"),
        ));
    }
    let mut data = vec![0.0; count];
    let row_len = h.width * h.channels;
    for (k, chunk) in bytes[h.data_offset..h.data_offset + expected].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        let file_row = k / row_len;
        let col = k % row_len;
        data[(h.height - 1 - file_row) * row_len + col] = v as f64;
    }
    Map::from_data(h.width, h.height, h.channels, data)
}

/// Encodes a 1- or 3-channel map; values are stored as `f32`.
pub fn encode_pfm(map: &Map) -> Result<Vec<u8>> {
    let magic = match map.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM holds 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    let row_len = map.width * map.channels;
    out.reserve(map.data.len() * 4);
    for row in (0..map.height).rev() {
        for v in &map.data[row * row_len..(row + 1) * row_len] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: &Path) -> Result<Map> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|e| e.with_path(path))
}

pub fn write_pfm(path: &Path, map: &Map) -> Result<()> {
    std::fs::write(path, encode_pfm(map)?).map_err(|e| Error::io(path, e))
}

/// Stores a multi-channel map as a single-channel map with the channels
/// stacked vertically (channel `k` occupies rows `k*H .. (k+1)*H`).
pub fn planar(map: &Map) -> Map {
    let (w, h, c) = (map.width, map.height, map.channels);
    let mut data = vec![0.0; w * h * c];
    for k in 0..c {
        for p in 0..w * h {
            data[k * w * h + p] = map.data[p * c + k];
        }
    }
    Map {
        width: w,
        height: h * c,
        channels: 1,
        data,
    }
}

/// Inverse of [`planar`].
pub fn interleaved(map: &Map, channels: usize) -> Result<Map> {
    if map.channels != 1 || channels == 0 || map.height % channels != 0 {
        return Err(Error::invalid(format!(
            "cannot split a {}x{}x{} map into {channels} planes",
            map.width, map.height, map.channels
        )));
    }
    let (w, h) = (map.width, map.height / channels);
    let mut data = vec![0.0; w * h * channels];
    for k in 0..channels {
        for p in 0..w * h {
            data[p * channels + k] = map.data[k * w * h + p];
        }
    }
    Map::from_data(w, h, channels, data)
}
