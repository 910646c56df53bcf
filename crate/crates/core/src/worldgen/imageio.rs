//! Binary PPM (P6) and PGM (P5) with 8-bit samples.
//!
//! Header is exactly `P6\n<W> <H>\n255\n` (or `P5`), followed by raw bytes in
//! scanline order. RGB floats are quantized as `round(clamp(v, 0, 1) * 255)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[f64]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Dimension(format!(
            "PPM expects {} samples, got {}",
            width * height * 3,
            rgb.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|&v| quantize(v)));
    Ok(out)
}

pub fn encode_pgm(width: usize, height: usize, values: &[u8]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Dimension(format!(
            "PGM expects {} samples, got {}",
            width * height,
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(values);
    Ok(out)
}

fn parse_header<'a>(bytes: &'a [u8], magic: &str) -> std::result::Result<(usize, usize, &'a [u8]), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| e.to_string())?);
    }
    if fields[0] != magic {
        return Err(format!("expected {magic}, found {}", fields[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| format!("bad header field `{s}`: {e}"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(format!("only 8-bit samples are supported, maxval={maxval}"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    Ok((w, h, &bytes[(pos + 1).min(bytes.len())..]))
}

/// Returns `(width, height, rgb in [0, 1])`.
pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    let (w, h, payload) = parse_header(bytes, "P6")?;
    if payload.len() < w * h * 3 {
        return Err(format!("payload holds {} bytes, need {}", payload.len(), w * h * 3));
    }
    Ok((w, h, payload[..w * h * 3].iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let (w, h, payload) = parse_header(bytes, "P5")?;
    if payload.len() < w * h {
        return Err(format!("payload holds {} bytes, need {}", payload.len(), w * h));
    }
    Ok((w, h, payload[..w * h].to_vec()))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    fs::write(path, encode_ppm(width, height, rgb)?).map_err(|e| Error::io(path, e))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, values)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|m| Error::InvalidArgument(format!("{}: {m}", path.display())))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|m| Error::InvalidArgument(format!("{}: {m}", path.display())))
}
